#ifndef LAWN_DATA_HPP
#define LAWN_DATA_HPP

#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "core.hpp"

namespace lawn {

struct Dataset {
    Matrix features;
    std::vector<int> labels;
    int nc = 2;
    std::string name;

    [[nodiscard]] std::size_t size() const { return labels.size(); }
    [[nodiscard]] std::size_t dim() const { return features.cols; }
};

struct BatchPlan {
    std::uint64_t base_seed = 0;
    std::size_t batch_size = 1;
    bool drop_last = false;
};

/// Rows `indices` of `data` as a new dataset (same nc and name).
[[nodiscard]] inline Dataset subset(const Dataset& data, std::span<const std::size_t> indices)
{
    Dataset out;
    out.nc = data.nc;
    out.name = data.name;
    out.features = Matrix(indices.size(), data.dim());
    out.labels.reserve(indices.size());
    for (std::size_t r = 0; r < indices.size(); ++r) {
        const auto src = data.features.row(indices[r]);
        std::copy(src.begin(), src.end(), out.features.row(r).begin());
        out.labels.push_back(data.labels[indices[r]]);
    }
    return out;
}

/// The two symmetric points (2,1) -> class 1 and (-2,-1) -> class 0. For a
/// bias-free linear scorer the max-margin direction is (2,1)/sqrt(5).
[[nodiscard]] inline Dataset toy_dataset()
{
    Dataset d;
    d.name = "toy";
    d.nc = 2;
    d.features = Matrix(2, 2);
    d.features(0, 0) = 2.0;
    d.features(0, 1) = 1.0;
    d.features(1, 0) = -2.0;
    d.features(1, 1) = -1.0;
    d.labels = {1, 0};
    return d;
}

/// Fisher-Yates permutation of [0, n) driven by one SplitMix64 stream.
[[nodiscard]] inline std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed)
{
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    SplitMix64 rng(seed);
    for (std::size_t i = n; i > 1; --i) {
        const auto j = static_cast<std::size_t>(rng.below(i));
        std::swap(perm[i - 1], perm[j]);
    }
    return perm;
}

/// Isotropic gaussian classes. Class means are the centred, scaled standard
/// basis vectors mu_k = s (e_k - 1/nc), which form a regular simplex with
/// pairwise distance s sqrt(2); s is chosen so that distance equals
/// 4 sigma sqrt(d). Requires d >= nc. Points are emitted class-major and
/// then round(label_noise_frac * m) of them, picked by a seeded shuffle,
/// have their label moved to a uniformly chosen wrong class.
[[nodiscard]] inline Dataset gaussian_blobs(int nc, std::size_t per_class, std::size_t d, double sigma,
                                            double label_noise_frac, std::uint64_t seed)
{
    if (nc < 2) {
        throw ConfigError("gaussian_blobs: need at least two classes");
    }
    if (per_class == 0) {
        throw ConfigError("gaussian_blobs: per_class must be positive");
    }
    if (d < static_cast<std::size_t>(nc)) {
        throw ConfigError("gaussian_blobs: dimension must be at least the number of classes");
    }
    if (!(sigma > 0.0)) {
        throw ConfigError("gaussian_blobs: sigma must be positive");
    }
    if (!(label_noise_frac >= 0.0 && label_noise_frac < 0.5)) {
        throw ConfigError("gaussian_blobs: label noise must lie in [0, 0.5)");
    }
    const auto classes = static_cast<std::size_t>(nc);
    const std::size_t m = classes * per_class;
    const double scale = 4.0 * sigma * std::sqrt(static_cast<double>(d)) / std::sqrt(2.0);

    Dataset out;
    out.name = "blobs";
    out.nc = nc;
    out.features = Matrix(m, d);
    out.labels.resize(m);

    SplitMix64 rng(mix_seed(seed, 1));
    std::vector<double> noise(m * d);
    for (std::size_t i = 0; i < noise.size(); i += 2) {
        const auto [a, b] = rng.normal_pair();
        noise[i] = a;
        if (i + 1 < noise.size()) {
            noise[i + 1] = b;
        }
    }
    for (std::size_t k = 0; k < classes; ++k) {
        for (std::size_t j = 0; j < per_class; ++j) {
            const std::size_t r = k * per_class + j;
            out.labels[r] = static_cast<int>(k);
            for (std::size_t c = 0; c < d; ++c) {
                double mean = c < classes ? -scale / static_cast<double>(nc) : 0.0;
                if (c == k) {
                    mean += scale;
                }
                out.features(r, c) = mean + sigma * noise[r * d + c];
            }
        }
    }

    const auto flips = static_cast<std::size_t>(std::llround(label_noise_frac * static_cast<double>(m)));
    if (flips > 0) {
        const auto order = permutation(m, mix_seed(seed, 2));
        SplitMix64 pick(mix_seed(seed, 3));
        for (std::size_t i = 0; i < flips; ++i) {
            const std::size_t r = order[i];
            const auto offset = 1 + static_cast<int>(pick.below(classes - 1));
            out.labels[r] = (out.labels[r] + offset) % nc;
        }
    }
    return out;
}

namespace detail {

inline std::vector<std::string_view> split_csv_line(std::string_view line)
{
    std::vector<std::string_view> cells;
    std::size_t start = 0;
    for (;;) {
        const auto comma = line.find(',', start);
        cells.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
        if (comma == std::string_view::npos) {
            break;
        }
        start = comma + 1;
    }
    return cells;
}

inline std::string_view trim(std::string_view s)
{
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) {
        s.remove_prefix(1);
    }
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
        s.remove_suffix(1);
    }
    return s;
}

} // namespace detail

/// Parses a header row plus numeric rows. The label column holds
/// nonnegative integers; every other column becomes a feature in file
/// order. nc = 1 + max label, so unused class indices are allowed.
[[nodiscard]] inline Dataset parse_csv(std::istream& in, std::string_view label_column, std::string name = "csv")
{
    std::string line;
    if (!std::getline(in, line) || detail::trim(line).empty()) {
        throw ParseError("csv: empty input (no header row)");
    }
    const auto header = detail::split_csv_line(detail::trim(line));
    std::size_t label_index = header.size();
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (detail::trim(header[i]) == label_column) {
            label_index = i;
        }
    }
    if (label_index == header.size()) {
        throw ParseError("csv: label column '" + std::string(label_column) + "' not found in header");
    }
    const std::size_t d = header.size() - 1;

    std::vector<double> values;
    std::vector<int> labels;
    std::size_t row_number = 1;
    while (std::getline(in, line)) {
        ++row_number;
        const auto body = detail::trim(line);
        if (body.empty()) {
            continue;
        }
        const auto cells = detail::split_csv_line(body);
        if (cells.size() != header.size()) {
            throw ParseError("csv: row " + std::to_string(row_number) + " has " + std::to_string(cells.size()) +
                             " cells, header has " + std::to_string(header.size()));
        }
        for (std::size_t i = 0; i < cells.size(); ++i) {
            const auto cell = detail::trim(cells[i]);
            if (i == label_index) {
                int y = -1;
                const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), y);
                if (ec != std::errc() || ptr != cell.data() + cell.size() || y < 0) {
                    throw ParseError("csv: row " + std::to_string(row_number) + " has invalid label '" +
                                     std::string(cell) + "'");
                }
                labels.push_back(y);
            } else {
                double x = 0.0;
                const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), x);
                if (ec != std::errc() || ptr != cell.data() + cell.size() || !std::isfinite(x)) {
                    throw ParseError("csv: row " + std::to_string(row_number) + " column " + std::to_string(i + 1) +
                                     " is not a finite number: '" + std::string(cell) + "'");
                }
                values.push_back(x);
            }
        }
    }
    if (labels.empty()) {
        throw ParseError("csv: no data rows");
    }
    Dataset out;
    out.name = std::move(name);
    out.features = Matrix(labels.size(), d);
    out.features.values = std::move(values);
    out.nc = 1 + *std::max_element(labels.begin(), labels.end());
    out.labels = std::move(labels);
    return out;
}

[[nodiscard]] inline Dataset load_csv(const std::string& path, std::string_view label_column)
{
    std::ifstream in(path);
    if (!in) {
        throw IoError("csv: cannot open '" + path + "'");
    }
    return parse_csv(in, label_column, path);
}

/// Seeded permutation, then the first m - n_test rows train and the rest test.
[[nodiscard]] inline std::pair<Dataset, Dataset> split(const Dataset& data, double test_frac, std::uint64_t seed)
{
    if (!(test_frac > 0.0 && test_frac < 1.0)) {
        throw ConfigError("split: test fraction must lie in (0, 1)");
    }
    const std::size_t m = data.size();
    const auto n_test = static_cast<std::size_t>(std::llround(test_frac * static_cast<double>(m)));
    if (n_test == 0 || n_test >= m) {
        throw ConfigError("split: " + std::to_string(m) + " rows cannot be split with test fraction " +
                          std::to_string(test_frac));
    }
    const auto perm = permutation(m, seed);
    const std::span<const std::size_t> all(perm);
    return {subset(data, all.first(m - n_test)), subset(data, all.subspan(m - n_test))};
}

/// Index slices for one epoch: a Fisher-Yates shuffle keyed by
/// (base_seed, epoch) cut into contiguous batches of the plan's size.
[[nodiscard]] inline std::vector<std::vector<std::size_t>> batches(const Dataset& data, const BatchPlan& plan,
                                                                   std::uint64_t epoch)
{
    const std::size_t m = data.size();
    if (plan.batch_size == 0 || plan.batch_size > m) {
        throw ConfigError("batches: batch size must lie in [1, " + std::to_string(m) + "]");
    }
    const auto perm = permutation(m, mix_seed(plan.base_seed, epoch));
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t start = 0; start < m; start += plan.batch_size) {
        const std::size_t end = std::min(m, start + plan.batch_size);
        if (plan.drop_last && end - start < plan.batch_size) {
            break;
        }
        out.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(start),
                         perm.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return out;
}

[[nodiscard]] inline std::size_t steps_per_epoch(std::size_t m, const BatchPlan& plan)
{
    return plan.drop_last ? m / plan.batch_size : (m + plan.batch_size - 1) / plan.batch_size;
}

} // namespace lawn

#endif // LAWN_DATA_HPP
