#pragma once

#include "ddvo/config.hpp"
#include "ddvo/ddvo.hpp"
#include "ddvo/dvo.hpp"
#include "ddvo/errors.hpp"
#include "ddvo/geometry.hpp"
#include "ddvo/gradcheck.hpp"
#include "ddvo/image_io.hpp"
#include "ddvo/imaging.hpp"
#include "ddvo/losses.hpp"
#include "ddvo/metrics.hpp"
#include "ddvo/synth.hpp"
#include "ddvo/training.hpp"
