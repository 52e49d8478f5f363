#ifndef MSCKE_ENGINE_HPP_
#define MSCKE_ENGINE_HPP_

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>

#include "mscke/memory.hpp"

namespace mscke {

// Generative model behind the routing engine. Implementations must not
// mutate shared state from generate(); the mock is fully deterministic.
class ModelClient {
 public:
  virtual ~ModelClient() = default;
  virtual std::string name() const = 0;
  virtual std::string generate(const ImageRef& image, const std::string& prompt) const = 0;
};

// Table-driven client: exact (image, prompt) -> text entries with a
// deterministic fallback echo "UNK:<fnv1a64(prompt) hex>".
class MockModelClient : public ModelClient {
 public:
  explicit MockModelClient(std::string name = "mock");

  std::string name() const override { return name_; }
  std::string generate(const ImageRef& image, const std::string& prompt) const override;

  void add_response(const ImageRef& image, const std::string& prompt, const std::string& text);
  void load_table(const std::string& jsonl_path);  // lines {image, prompt, text}
  std::size_t table_size() const { return table_.size(); }

  static std::string fallback_echo(const std::string& prompt);

 private:
  std::string name_;
  std::map<std::pair<ImageRef, std::string>, std::string> table_;
};

// Remote client: POST /generate {"prompt", "image": string|null} -> {"text"}.
class HttpModelClient : public ModelClient {
 public:
  HttpModelClient(std::string name, std::string base_url, double timeout_seconds = 30.0);

  std::string name() const override { return name_; }
  std::string generate(const ImageRef& image, const std::string& prompt) const override;

 private:
  std::string name_;
  std::string base_url_;
  double timeout_seconds_;
};

inline constexpr char kDefaultPromptTemplate[] =
    "New fact: {edit_prompt} {edit_target}\nQuestion: {query_prompt}\nAnswer:";

// Deterministic substitution of {edit_prompt}, {edit_target}, {query_prompt}
// into the template; all three placeholders must be present.
std::string compose_counterfactual_prompt(const EditExample& edit, const QueryInput& query,
                                          const std::string& prompt_template = kDefaultPromptTemplate);

enum class Route { kBase, kCounterfactual };

std::string route_name(Route route);

struct Answer {
  std::string text;
  ScopeDecision decision;
  Route route = Route::kBase;
  std::optional<std::string> used_edit;  // edit id, counterfactual route only
};

inline constexpr double kScopeThreshold = 0.5;

// The routing engine: queries with rho < 0.5 go verbatim to the frozen base
// client, the rest to the counterfactual backbone with the composed prompt.
// The base client is never touched by edits. A threshold other than 0.5 is
// an experimental, non-conformant setting; the Answer route/in_scope
// invariants are guaranteed only at 0.5.
class Engine {
 public:
  Engine(MemoryStore memory, AlignmentHead head, const EmbeddingProvider& provider,
         const ModelClient& base, const ModelClient& counterfactual,
         std::string prompt_template = kDefaultPromptTemplate,
         double threshold = kScopeThreshold);

  void apply_edit(const EditExample& edit);
  Answer answer(const QueryInput& query) const;

  const MemoryStore& memory() const { return memory_; }
  const AlignmentHead& head() const { return head_; }
  const ModelClient& base() const { return base_; }
  double threshold() const { return threshold_; }

 private:
  MemoryStore memory_;
  AlignmentHead head_;
  const EmbeddingProvider& provider_;
  const ModelClient& base_;
  const ModelClient& counterfactual_;
  std::string prompt_template_;
  double threshold_;
};

}  // namespace mscke

#endif  // MSCKE_ENGINE_HPP_
