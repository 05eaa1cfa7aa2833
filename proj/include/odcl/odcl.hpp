#pragma once

#include "odcl/config.hpp"
#include "odcl/confusion.hpp"
#include "odcl/error.hpp"
#include "odcl/experiment.hpp"
#include "odcl/gridnet.hpp"
#include "odcl/metrics.hpp"
#include "odcl/pipeline.hpp"
#include "odcl/regularize.hpp"
#include "odcl/replay.hpp"
#include "odcl/report.hpp"
#include "odcl/synthstream.hpp"
