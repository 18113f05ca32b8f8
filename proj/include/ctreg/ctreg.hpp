#pragma once

#include "ctreg/error.hpp"
#include "ctreg/volume.hpp"
#include "ctreg/sampling.hpp"
#include "ctreg/preprocess.hpp"
#include "ctreg/weight_map.hpp"
#include "ctreg/losses.hpp"
#include "ctreg/engine.hpp"
#include "ctreg/metrics.hpp"
#include "ctreg/phantom.hpp"
#include "ctreg/image_data.hpp"
#include "ctreg/nifti.hpp"
#include "ctreg/raw_bundle.hpp"
#include "ctreg/io.hpp"
#include "ctreg/config.hpp"
#include "ctreg/report.hpp"
#include "ctreg/bundle.hpp"
