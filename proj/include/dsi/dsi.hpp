#pragma once

#include "dsi/assim.hpp"
#include "dsi/core.hpp"
#include "dsi/diag.hpp"
#include "dsi/io.hpp"
#include "dsi/latent.hpp"
#include "dsi/pcaht.hpp"
#include "dsi/pipeline.hpp"
#include "dsi/rae/network.hpp"
#include "dsi/rs.hpp"
#include "dsi/synth.hpp"
