#pragma once

// Convenience include pulling in the whole library.

#include "gad/common.hpp"
#include "gad/diffusion.hpp"
#include "gad/image_io.hpp"
#include "gad/labels.hpp"
#include "gad/pfm_io.hpp"
#include "gad/pipeline.hpp"
#include "gad/png_io.hpp"
#include "gad/raster.hpp"
