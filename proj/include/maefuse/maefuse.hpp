#pragma once

// Umbrella header.

#include "maefuse/checkpoint.hpp"
#include "maefuse/config.hpp"
#include "maefuse/dataset.hpp"
#include "maefuse/funet.hpp"
#include "maefuse/gradcheck.hpp"
#include "maefuse/losses.hpp"
#include "maefuse/mae.hpp"
#include "maefuse/metrics.hpp"
#include "maefuse/nifti.hpp"
#include "maefuse/probe.hpp"
#include "maefuse/runner.hpp"
#include "maefuse/synth.hpp"
#include "maefuse/version.hpp"
