#pragma once

#include "qsdiff/core.hpp"
#include "qsdiff/dyadic.hpp"
#include "qsdiff/rng.hpp"
#include "qsdiff/affine_map.hpp"
#include "qsdiff/maps.hpp"
#include "qsdiff/affine_approx.hpp"
#include "qsdiff/carleson.hpp"
#include "qsdiff/corona.hpp"
#include "qsdiff/extension.hpp"
#include "qsdiff/bilip.hpp"
#include "qsdiff/report.hpp"
