#include "bssm/timing.hpp"

#include <chrono>

#include "bssm/error.hpp"

namespace bssm {

namespace {

void run_batch(const ModelState<float>& model, const std::vector<TokenSequence>& data, std::size_t start,
               std::size_t size) {
  std::vector<const TokenSequence*> ptrs;
  for (std::size_t i = start; i < std::min(data.size(), start + size); ++i) ptrs.push_back(&data[i]);
  const auto batch = make_batch<float>(std::span<const TokenSequence* const>(ptrs));
  const Var<float> hidden = model_forward(model, batch);
  if (!model.head_weights.empty())
    classify(model, hidden, batch);
  else
    lm_logits(model, hidden);
}

}  // namespace

TimingResult time_inference(const ModelState<float>& model, const std::vector<TokenSequence>& data, int batch_size) {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  TimingResult r;
  if (data.empty()) return r;
  NoGradGuard guard;
  const auto bs = static_cast<std::size_t>(batch_size);
  run_batch(model, data, 0, bs);
  r.warmup_batches = 1;
  const auto start = std::chrono::steady_clock::now();
  for (std::size_t s = 0; s < data.size(); s += bs) {
    run_batch(model, data, s, bs);
    ++r.timed_batches;
  }
  const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  r.samples = data.size();
  r.ms_per_sample = ms / static_cast<double>(r.samples);
  return r;
}

}  // namespace bssm
