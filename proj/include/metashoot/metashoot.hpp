#pragma once

#include "metashoot/error.hpp"
#include "metashoot/kernels.hpp"
#include "metashoot/particles.hpp"
#include "metashoot/dynamics.hpp"
#include "metashoot/image_field.hpp"
#include "metashoot/image_io.hpp"
#include "metashoot/adjoint.hpp"
#include "metashoot/optimizer.hpp"
#include "metashoot/renderer.hpp"
#include "metashoot/random.hpp"
#include "metashoot/sampler.hpp"
#include "metashoot/serialization.hpp"
