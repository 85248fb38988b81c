#pragma once

#include "basis/core.hpp"
#include "basis/eval.hpp"
#include "basis/experiment.hpp"
#include "basis/io.hpp"
#include "basis/parallel.hpp"
#include "basis/priors.hpp"
#include "basis/sampler.hpp"
#include "basis/scorenet.hpp"
#include "basis/tasks.hpp"
#include "basis/toy.hpp"
