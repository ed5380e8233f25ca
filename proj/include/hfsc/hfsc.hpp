#pragma once

#include "pomdp_model.hpp"
#include "pomdp_io.hpp"
#include "chain_of_chains.hpp"
#include "controller.hpp"
#include "controller_io.hpp"
#include "evaluate.hpp"
#include "simulate.hpp"
#include "kernel.hpp"
#include "inference.hpp"
#include "em.hpp"
#include "bench.hpp"
