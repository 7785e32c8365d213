#pragma once

#include "dst/tensor.hpp"
#include "dst/autograd.hpp"
#include "dst/optim.hpp"
#include "dst/encoding.hpp"
#include "dst/association.hpp"
#include "dst/hungarian.hpp"
#include "dst/simulator.hpp"
#include "dst/training.hpp"
#include "dst/tracker.hpp"
#include "dst/metrics.hpp"
#include "dst/stats.hpp"
#include "dst/config.hpp"
#include "dst/io.hpp"
#include "dst/ablation.hpp"
