#pragma once

#include "facl/ablate.hpp"
#include "facl/checkpoint.hpp"
#include "facl/config.hpp"
#include "facl/data.hpp"
#include "facl/dataaug.hpp"
#include "facl/feataug.hpp"
#include "facl/graph.hpp"
#include "facl/layouts.hpp"
#include "facl/losses.hpp"
#include "facl/nets.hpp"
#include "facl/ops.hpp"
#include "facl/optim.hpp"
#include "facl/probe.hpp"
#include "facl/rng.hpp"
#include "facl/tensor.hpp"
#include "facl/train.hpp"
