#ifndef MOPE_MOPE_HPP_
#define MOPE_MOPE_HPP_

#include "mope/complexity.hpp"
#include "mope/distortion.hpp"
#include "mope/evalkit.hpp"
#include "mope/losses.hpp"
#include "mope/models.hpp"
#include "mope/network.hpp"
#include "mope/ops.hpp"
#include "mope/optim.hpp"
#include "mope/router.hpp"
#include "mope/synth.hpp"
#include "mope/tensor.hpp"
#include "mope/training.hpp"
#include "mope/weights_io.hpp"

#endif  // MOPE_MOPE_HPP_
