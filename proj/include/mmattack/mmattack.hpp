#pragma once

// Umbrella header for the constrained multimodal attack engine.

#include "mmattack/core.hpp"
#include "mmattack/dataset.hpp"
#include "mmattack/deskset.hpp"
#include "mmattack/embed.hpp"
#include "mmattack/errors.hpp"
#include "mmattack/evalharness.hpp"
#include "mmattack/imageio.hpp"
#include "mmattack/labeling.hpp"
#include "mmattack/pgd.hpp"
#include "mmattack/pipeline.hpp"
#include "mmattack/rng.hpp"
#include "mmattack/textattack.hpp"
#include "mmattack/victim.hpp"
