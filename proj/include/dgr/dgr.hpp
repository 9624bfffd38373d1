#pragma once

#include "dgr/core.hpp"
#include "dgr/parallel.hpp"
#include "dgr/log.hpp"
#include "dgr/fvr.hpp"
#include "dgr/projector.hpp"
#include "dgr/ssim.hpp"
#include "dgr/metrics.hpp"
#include "dgr/loss.hpp"
#include "dgr/densify.hpp"
#include "dgr/optim.hpp"
#include "dgr/phantom.hpp"
#include "dgr/io.hpp"
#include "dgr/config.hpp"
#include "dgr/commands.hpp"
