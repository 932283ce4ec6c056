#pragma once

#include "clipdebias/attribute_proxy.hpp"
#include "clipdebias/dataset.hpp"
#include "clipdebias/embedding.hpp"
#include "clipdebias/error.hpp"
#include "clipdebias/kmeans.hpp"
#include "clipdebias/manifest.hpp"
#include "clipdebias/metrics.hpp"
#include "clipdebias/model.hpp"
#include "clipdebias/random.hpp"
#include "clipdebias/sampler.hpp"
#include "clipdebias/synthlab.hpp"
#include "clipdebias/trainer.hpp"
