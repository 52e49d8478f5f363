#ifndef MSCKE_EVALUATION_HPP_
#define MSCKE_EVALUATION_HPP_

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mscke/engine.hpp"

namespace mscke {

// Indicator used by every metric: compare after trimming, whitespace
// collapsing, ASCII case folding and stripping one terminal period.
std::string normalize_answer(const std::string& s);
bool exact_match(const std::string& a, const std::string& b);

enum class MatchMode { kNormalizedExact };

MatchMode match_mode_from_string(const std::string& name);

struct EvalConfig {
  MatchMode match_mode = MatchMode::kNormalizedExact;
  std::string report_path;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> config_echo;  // provider/client names etc.
};

// Shared context for the per-record engines: every record is evaluated in
// isolation against a fresh memory holding only its own edit.
struct EvalContext {
  const AlignmentHead* head = nullptr;
  const EmbeddingProvider* provider = nullptr;
  const ModelClient* base = nullptr;
  const ModelClient* counterfactual = nullptr;
  std::string prompt_template = kDefaultPromptTemplate;
};

struct SpecificityResult {
  std::optional<double> specificity;
  std::optional<double> spec_in;
  std::optional<double> spec_out;
  std::size_t in_total = 0;
  std::size_t out_total = 0;
};

double eval_reliability(const EvalContext& ctx, const std::vector<DatasetRecord>& records);
double eval_locality(const EvalContext& ctx, const std::vector<DatasetRecord>& records);
// Records with an empty rephrase prompt are skipped and reported via
// skipped_out; returns nullopt when every record was skipped.
std::optional<double> eval_generality(const EvalContext& ctx,
                                      const std::vector<DatasetRecord>& records,
                                      std::vector<std::size_t>* skipped_out = nullptr);
SpecificityResult eval_specificity(const EvalContext& ctx,
                                   const std::vector<DatasetRecord>& records);

// Runs all four metrics over the dataset file and writes the JSON report
// (sorted keys, stable bytes) to config.report_path when non-empty.
MetricsReport run_report(const EvalContext& ctx, const std::string& dataset_path,
                         const EvalConfig& config);

std::string report_to_json(const MetricsReport& report, const EvalConfig& config);

}  // namespace mscke

#endif  // MSCKE_EVALUATION_HPP_
