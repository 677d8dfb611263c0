#pragma once

#include "nhgps/error.hpp"
#include "nhgps/numeric.hpp"
#include "nhgps/stats.hpp"
#include "nhgps/linalg.hpp"
#include "nhgps/optim.hpp"
#include "nhgps/kernels.hpp"
#include "nhgps/polya_gamma.hpp"
#include "nhgps/gp.hpp"
#include "nhgps/features.hpp"
#include "nhgps/model.hpp"
#include "nhgps/simulate.hpp"
#include "nhgps/gibbs.hpp"
#include "nhgps/vi.hpp"
#include "nhgps/predictive.hpp"
#include "nhgps/inference.hpp"
#include "nhgps/gof.hpp"
#include "nhgps/io.hpp"
