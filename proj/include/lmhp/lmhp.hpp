#ifndef LMHP_LMHP_HPP
#define LMHP_LMHP_HPP

#include "lmhp/access.hpp"
#include "lmhp/adam.hpp"
#include "lmhp/dense.hpp"
#include "lmhp/error.hpp"
#include "lmhp/eval.hpp"
#include "lmhp/gradient.hpp"
#include "lmhp/io.hpp"
#include "lmhp/lazy.hpp"
#include "lmhp/model.hpp"
#include "lmhp/scan.hpp"
#include "lmhp/simulate.hpp"
#include "lmhp/softplus.hpp"
#include "lmhp/trainer.hpp"

#endif  // LMHP_LMHP_HPP
