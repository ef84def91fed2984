#pragma once

#include "core.hpp"
#include "decompose.hpp"
#include "dictlearn.hpp"
#include "harness.hpp"
#include "spectral.hpp"
#include "tensor4.hpp"
