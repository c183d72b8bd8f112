#pragma once

#include "memoattn/ann_index.hpp"
#include "memoattn/apm_store.hpp"
#include "memoattn/corpus.hpp"
#include "memoattn/embedder.hpp"
#include "memoattn/engine.hpp"
#include "memoattn/model.hpp"
#include "memoattn/profile.hpp"
#include "memoattn/profiler.hpp"
#include "memoattn/reports.hpp"
#include "memoattn/similarity.hpp"
#include "memoattn/tensor.hpp"
