#pragma once

#include <vector>

#include "bssm/model.hpp"

namespace bssm {

struct TimingResult {
  double ms_per_sample = 0.0;
  std::size_t samples = 0;
  std::size_t warmup_batches = 0;
  std::size_t timed_batches = 0;
};

/// Runs one untimed warm-up batch, then times classification (or the LM
/// forward pass for models without heads) over the whole dataset.
TimingResult time_inference(const ModelState<float>& model, const std::vector<TokenSequence>& data, int batch_size);

}  // namespace bssm
