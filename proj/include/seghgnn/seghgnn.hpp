#pragma once

#include "seghgnn/error.hpp"
#include "seghgnn/grid.hpp"
#include "seghgnn/hgnn.hpp"
#include "seghgnn/io.hpp"
#include "seghgnn/manifold.hpp"
#include "seghgnn/metrics.hpp"
#include "seghgnn/pipeline.hpp"
#include "seghgnn/stiefel.hpp"
