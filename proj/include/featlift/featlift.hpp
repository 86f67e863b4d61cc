#pragma once

#include "featlift/edit.hpp"
#include "featlift/error.hpp"
#include "featlift/feature_map.hpp"
#include "featlift/oracle.hpp"
#include "featlift/parallel.hpp"
#include "featlift/query.hpp"
#include "featlift/rasterizer.hpp"
#include "featlift/scene.hpp"
#include "featlift/synth.hpp"
#include "featlift/uplift.hpp"
