#include "mscke/memory.hpp"

#include <filesystem>

#include "mscke/parallel.hpp"

namespace mscke {

namespace fs = std::filesystem;

namespace {

void check_fingerprint(const MemoryStore& store, const AlignmentHead& head) {
  if (store.entries.empty()) return;
  if (!store.head_fingerprint || *store.head_fingerprint != head_fingerprint(head))
    throw StaleCacheError("memory embeddings were cached with a different head");
}

ScopeDecision lookup_impl(const MemoryStore& store, const QueryInput& query,
                          const AlignmentHead& head, const EmbeddingProvider& provider,
                          bool parallel) {
  if (store.entries.empty()) return ScopeDecision{};
  check_fingerprint(store, head);

  Vec z_query = embed_query_side(head, provider, query);
  std::vector<double> rho(store.entries.size(), 0.0);
  parallel_for(store.entries.size(), parallel, [&](std::size_t i) {
    rho[i] = score(head, store.entries[i].z_edit, z_query);
  });

  std::size_t best = 0;
  for (std::size_t i = 1; i < rho.size(); ++i) {
    if (rho[i] > rho[best]) best = i;  // strict: ties keep the lowest index
  }
  ScopeDecision decision;
  decision.k_star = best;
  decision.rho = rho[best];
  decision.in_scope = rho[best] >= 0.5;
  return decision;
}

}  // namespace

void add_edit(MemoryStore& store, const EditExample& edit, const AlignmentHead& head,
              const EmbeddingProvider& provider) {
  if (edit.prompt.empty() || edit.target.empty() || edit.id.empty())
    throw ValidationError("edit example fields must be non-empty");
  validate_image_ref(edit.image, "image");
  for (const MemoryEntry& e : store.entries) {
    if (e.edit.id == edit.id) throw ConflictError("duplicate edit id: " + edit.id);
  }
  std::uint64_t fp = head_fingerprint(head);
  if (store.head_fingerprint && !store.entries.empty() && *store.head_fingerprint != fp)
    throw StaleCacheError("store already holds embeddings from a different head");

  MemoryEntry entry;
  entry.edit = edit;
  entry.z_edit = embed_edit_side(head, provider, edit);
  store.entries.push_back(std::move(entry));
  store.head_fingerprint = fp;
}

ScopeDecision lookup_best(const MemoryStore& store, const QueryInput& query,
                          const AlignmentHead& head, const EmbeddingProvider& provider) {
  return lookup_impl(store, query, head, provider, true);
}

ScopeDecision lookup_best_serial(const MemoryStore& store, const QueryInput& query,
                                 const AlignmentHead& head, const EmbeddingProvider& provider) {
  return lookup_impl(store, query, head, provider, false);
}

void remove_edit(MemoryStore& store, const std::string& id) {
  for (auto it = store.entries.begin(); it != store.entries.end(); ++it) {
    if (it->edit.id == id) {
      store.entries.erase(it);
      return;
    }
  }
  throw NotFoundError("edit id not found: " + id);
}

void save_memory(const MemoryStore& store, const std::string& dir) {
  fs::create_directories(dir);
  std::string edits;
  std::vector<SidecarEntry> embeds;
  std::size_t d = 0;
  for (const MemoryEntry& e : store.entries) {
    edits += serialize_edit_example(e.edit);
    edits += '\n';
    SidecarEntry entry;
    entry.key = e.edit.id;
    entry.value.cols = e.z_edit.size();
    entry.value.data = e.z_edit;
    d = e.z_edit.size();
    embeds.push_back(std::move(entry));
  }
  write_text_file((fs::path(dir) / "edits.jsonl").string(), edits);
  write_sidecar((fs::path(dir) / "embeds.msce").string(), d == 0 ? 1 : d, embeds);
  std::string fp = store.head_fingerprint ? to_hex16(*store.head_fingerprint)
                                          : std::string(16, '0');
  write_text_file((fs::path(dir) / "head.fp").string(), fp + "\n");
}

MemoryStore load_memory(const std::string& dir) {
  MemoryStore store;

  std::string fp_text = read_text_file((fs::path(dir) / "head.fp").string());
  if (fp_text.size() < 16) throw StaleCacheError("head.fp is malformed in " + dir);
  std::uint64_t fp = 0;
  for (std::size_t i = 0; i < 16; ++i) {
    char c = fp_text[i];
    std::uint64_t digit;
    if (c >= '0' && c <= '9') digit = static_cast<std::uint64_t>(c - '0');
    else if (c >= 'a' && c <= 'f') digit = static_cast<std::uint64_t>(c - 'a' + 10);
    else throw StaleCacheError("head.fp is malformed in " + dir);
    fp = (fp << 4) | digit;
  }

  std::string edits_text = read_text_file((fs::path(dir) / "edits.jsonl").string());
  std::vector<EditExample> edits;
  std::size_t line_number = 0;
  for (const std::string& line : split_lines(edits_text)) {
    ++line_number;
    if (line.empty()) continue;
    edits.push_back(parse_edit_example(line, line_number));
  }

  std::size_t d = 0;
  std::vector<SidecarEntry> embeds = read_sidecar((fs::path(dir) / "embeds.msce").string(), &d);
  if (embeds.size() != edits.size())
    throw FormatError("memory directory is inconsistent: edit/embedding count mismatch");

  for (std::size_t i = 0; i < edits.size(); ++i) {
    if (embeds[i].key != edits[i].id)
      throw FormatError("memory directory is inconsistent: id order mismatch at entry " +
                        std::to_string(i));
    if (embeds[i].value.rows() != 1)
      throw FormatError("memory embedding is not a single vector: " + embeds[i].key);
    MemoryEntry entry;
    entry.edit = std::move(edits[i]);
    entry.z_edit = std::move(embeds[i].value.data);
    store.entries.push_back(std::move(entry));
  }
  if (!store.entries.empty() || fp != 0) store.head_fingerprint = fp;
  return store;
}

}  // namespace mscke
