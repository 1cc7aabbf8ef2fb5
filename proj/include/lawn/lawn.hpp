#ifndef LAWN_LAWN_HPP
#define LAWN_LAWN_HPP

#include "core.hpp"
#include "data.hpp"
#include "diagnostics.hpp"
#include "harness.hpp"
#include "losses.hpp"
#include "network.hpp"
#include "objective.hpp"
#include "optim.hpp"
#include "schedule.hpp"

#endif // LAWN_LAWN_HPP
