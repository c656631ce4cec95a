#pragma once

#include "mhs/config.hpp"
#include "mhs/dataset.hpp"
#include "mhs/dt_model.hpp"
#include "mhs/errors.hpp"
#include "mhs/harness.hpp"
#include "mhs/policies.hpp"
#include "mhs/simulation.hpp"
#include "mhs/stats.hpp"
#include "mhs/topology.hpp"
#include "mhs/types.hpp"
