// Benchmark comparing the OpenMP kernels against their serial references:
// memory-scan retrieval and batch gradient evaluation. Results must agree
// bit-exactly; the table reports wall times and speedups.
#include <chrono>
#include <cstdio>
#include <vector>

#include "mscke/classifier.hpp"
#include "mscke/memory.hpp"

using namespace mscke;

namespace {

double ms_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
      .count();
}

std::vector<TrainPair> synth_pairs(std::size_t n) {
  std::vector<TrainPair> pairs;
  for (std::size_t i = 0; i < n; ++i) {
    TrainPair pair;
    std::string tag = std::to_string(i);
    pair.edit = EditExample{ImageRef{"bench-img-" + tag}, "stored fact number " + tag,
                            "value " + tag, "b" + tag};
    pair.in_query = QueryInput{ImageRef{"bench-img-" + tag}, "a question about fact " + tag};
    pair.out_query = QueryInput{ImageRef{"bench-far-" + tag}, "an unrelated probe " + tag};
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

}  // namespace

int main(int argc, char** argv) {
  std::size_t store_size = argc > 1 ? static_cast<std::size_t>(std::atol(argv[1])) : 4096;
  std::size_t batch_size = argc > 2 ? static_cast<std::size_t>(std::atol(argv[2])) : 128;
  int rounds = argc > 3 ? std::atoi(argv[3]) : 5;

  ToyProvider provider(0, 64, 8);
  AlignmentHead head = make_head(FusionMode::kDotAttention, 64, 32, 1);

  std::printf("mscke kernel benchmark (store=%zu, batch=%zu, rounds=%d)\n", store_size, batch_size,
              rounds);

  // retrieval scan
  MemoryStore store;
  std::vector<TrainPair> edits = synth_pairs(store_size);
  for (const TrainPair& p : edits) add_edit(store, p.edit, head, provider);
  QueryInput probe{ImageRef{"bench-img-17"}, "a question about fact 17"};

  ScopeDecision serial_decision, parallel_decision;
  auto t0 = std::chrono::steady_clock::now();
  for (int r = 0; r < rounds; ++r) serial_decision = lookup_best_serial(store, probe, head, provider);
  double serial_ms = ms_since(t0) / rounds;
  t0 = std::chrono::steady_clock::now();
  for (int r = 0; r < rounds; ++r) parallel_decision = lookup_best(store, probe, head, provider);
  double parallel_ms = ms_since(t0) / rounds;
  bool lookup_equal = serial_decision == parallel_decision;
  std::printf("lookup_best   serial %8.3f ms   openmp %8.3f ms   speedup %.2fx   equal=%s\n",
              serial_ms, parallel_ms, serial_ms / parallel_ms, lookup_equal ? "yes" : "NO");

  // batch gradient
  std::vector<TrainPair> batch = synth_pairs(batch_size);
  HeadGrad gs, gp;
  t0 = std::chrono::steady_clock::now();
  for (int r = 0; r < rounds; ++r) gs = grad_serial(head, provider, batch);
  double grad_serial_ms = ms_since(t0) / rounds;
  t0 = std::chrono::steady_clock::now();
  for (int r = 0; r < rounds; ++r) gp = grad(head, provider, batch);
  double grad_parallel_ms = ms_since(t0) / rounds;
  bool grad_equal = true;
  std::vector<double*> ps = param_ptrs(gs, head.fusion);
  std::vector<double*> pp = param_ptrs(gp, head.fusion);
  for (std::size_t i = 0; i < ps.size(); ++i)
    if (*ps[i] != *pp[i]) grad_equal = false;
  std::printf("batch grad    serial %8.3f ms   openmp %8.3f ms   speedup %.2fx   equal=%s\n",
              grad_serial_ms, grad_parallel_ms, grad_serial_ms / grad_parallel_ms,
              grad_equal ? "yes" : "NO");

  return lookup_equal && grad_equal ? 0 : 1;
}
