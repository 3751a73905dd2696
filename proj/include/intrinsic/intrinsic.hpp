#pragma once

#include "intrinsic/annotations.hpp"
#include "intrinsic/dataset.hpp"
#include "intrinsic/errors.hpp"
#include "intrinsic/filters.hpp"
#include "intrinsic/flatten.hpp"
#include "intrinsic/image.hpp"
#include "intrinsic/metric.hpp"
#include "intrinsic/model.hpp"
#include "intrinsic/parallel.hpp"
#include "intrinsic/pipeline.hpp"
#include "intrinsic/png_io.hpp"
