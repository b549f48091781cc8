#pragma once

// libtorch defines a glog-style CHECK macro; include it first and drop that
// definition so doctest's assertion macros are the ones in effect.
#include <torch/torch.h>
#undef CHECK
#include <doctest.h>
