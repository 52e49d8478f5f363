#ifndef MSCKE_MEMORY_HPP_
#define MSCKE_MEMORY_HPP_

#include <optional>
#include <string>
#include <vector>

#include "mscke/classifier.hpp"
#include "mscke/core.hpp"

namespace mscke {

struct ScopeDecision {
  std::optional<std::size_t> k_star;  // index of the most similar edit
  double rho = 0.0;
  bool in_scope = false;  // rho >= 0.5

  bool operator==(const ScopeDecision&) const = default;
};

struct MemoryEntry {
  EditExample edit;
  Vec z_edit;  // fused edit-side embedding cached at insertion time
};

// Ordered edit store with cached fused embeddings. The fingerprint records
// which head produced the caches; lookups against a different head fail as
// stale instead of silently mixing embeddings.
struct MemoryStore {
  std::vector<MemoryEntry> entries;
  std::optional<std::uint64_t> head_fingerprint;

  std::size_t size() const { return entries.size(); }
  bool empty() const { return entries.empty(); }
};

void add_edit(MemoryStore& store, const EditExample& edit, const AlignmentHead& head,
              const EmbeddingProvider& provider);

// Argmax of rho over entries, ties to the lowest index; empty store yields
// the out-of-scope sentinel {nullopt, 0.0, false}. The scan is OpenMP
// parallel; lookup_best_serial is the reference kept for testing and
// benchmarking, the two are bit-identical.
ScopeDecision lookup_best(const MemoryStore& store, const QueryInput& query,
                          const AlignmentHead& head, const EmbeddingProvider& provider);
ScopeDecision lookup_best_serial(const MemoryStore& store, const QueryInput& query,
                                 const AlignmentHead& head, const EmbeddingProvider& provider);

void remove_edit(MemoryStore& store, const std::string& id);

// Directory layout: edits.jsonl, embeds.msce, head.fp (16 hex chars + \n).
void save_memory(const MemoryStore& store, const std::string& dir);
MemoryStore load_memory(const std::string& dir);

}  // namespace mscke

#endif  // MSCKE_MEMORY_HPP_
