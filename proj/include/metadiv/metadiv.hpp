#pragma once

// Meta-diversity search over a 3D multi-channel continuous cellular
// automaton: CPPN-encoded genomes grow voxel artifacts, a hierarchy of VAE
// characterization spaces partitions the discoveries, and a goal-based
// exploration loop fills each niche. Everything is deterministic given the
// run seed; discoveries persist to an append-only archive.

#include "metadiv/archive.hpp"
#include "metadiv/config.hpp"
#include "metadiv/convolution.hpp"
#include "metadiv/cppn.hpp"
#include "metadiv/errors.hpp"
#include "metadiv/field.hpp"
#include "metadiv/genome.hpp"
#include "metadiv/holmes.hpp"
#include "metadiv/imgep.hpp"
#include "metadiv/lenia.hpp"
#include "metadiv/rng.hpp"
#include "metadiv/serialize.hpp"
#include "metadiv/vae.hpp"
