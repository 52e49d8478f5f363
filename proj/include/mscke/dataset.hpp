#ifndef MSCKE_DATASET_HPP_
#define MSCKE_DATASET_HPP_

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mscke/core.hpp"
#include "mscke/engine.hpp"

namespace mscke {

struct RawVQARecord {
  ImageRef image;
  std::string question;
  std::string answer;
  std::int64_t order_index = 0;  // position within its image group

  bool operator==(const RawVQARecord&) const = default;
};

// "<image>#<order_index>"; the id scheme used by the scripted judge table.
std::string raw_record_id(const RawVQARecord& record);

RawVQARecord parse_raw_vqa(const std::string& line, std::size_t line_number = 0);
std::vector<RawVQARecord> read_raw_vqa_file(const std::string& path);

struct RawGroup {
  ImageRef image;
  std::vector<RawVQARecord> records;
};

// Groups by image in first-appearance order.
std::vector<RawGroup> group_raw_records(const std::vector<RawVQARecord>& records);

enum class Verdict { kYes, kNo, kMaybe };

Verdict verdict_from_string(const std::string& s);
std::string verdict_name(Verdict v);

struct JudgeRequest {
  std::string prompt;
  ImageRef image;  // present for stage 1, absent for stage 2
  std::string criterion_id;
  std::string candidate_id;
  int stage = 1;
};

class JudgeClient {
 public:
  virtual ~JudgeClient() = default;
  virtual std::string name() const = 0;
  virtual Verdict judge(const JudgeRequest& request) const = 0;
};

// CSV-driven judge: lines "criterion_id,candidate_id,stage,verdict".
// A missing entry is an error so fixture gaps fail loudly.
class ScriptedJudge : public JudgeClient {
 public:
  ScriptedJudge() = default;
  explicit ScriptedJudge(const std::string& csv_path);

  std::string name() const override { return "scripted"; }
  Verdict judge(const JudgeRequest& request) const override;

  void add_verdict(const std::string& criterion_id, const std::string& candidate_id, int stage,
                   Verdict verdict);

 private:
  std::map<std::string, Verdict> table_;
};

// POST /judge {"prompt", "image": string|null} -> {"verdict": "Yes"|"No"|"Maybe"},
// with optional bearer-token pass-through.
class HttpJudge : public JudgeClient {
 public:
  HttpJudge(std::string base_url, std::string bearer_token = "", double timeout_seconds = 30.0);

  std::string name() const override { return "http"; }
  Verdict judge(const JudgeRequest& request) const override;

 private:
  std::string base_url_;
  std::string bearer_token_;
  double timeout_seconds_;
};

// Judge and rephrase prompt constants sent verbatim; the QA wrapper appended
// after them is documented in the README.
inline constexpr char kStage1Prompt[] =
    "Using the provided image, analyze whether classification criterion logically entails this "
    "question, specifically, whether a change in Answer 1 would impact Answer 2. Please make a "
    "simple judgment (Yes, No, Maybe), and your response should not contain any other characters.";
inline constexpr char kStage2Prompt[] =
    "analyze whether classification criterion logically entails this question, specifically, "
    "whether a change in Answer 1 would impact Answer 2. Please make a simple judgment (Yes, No, "
    "Maybe), and your response should not contain any other characters.";
inline constexpr char kRephrasePrompt[] =
    "Please rewrite the following question differently. Do not include the original question";

struct PipelineConfig {
  std::uint64_t seed = 0;
  std::string prompt_stage1 = kStage1Prompt;
  std::string prompt_stage2 = kStage2Prompt;
  std::string prompt_rephrase = kRephrasePrompt;
  // Train share of the 3:1 split. Overriding it is non-conformant and the
  // CLI warns when it is changed.
  double train_fraction = 0.75;
};

std::string compose_judge_prompt(const std::string& stage_prompt, const RawVQARecord& criterion,
                                 const RawVQARecord& candidate);

// The first question (minimal order_index) becomes the classification
// criterion and the edit sample; the remainder keeps input order.
std::pair<RawVQARecord, std::vector<RawVQARecord>> select_criterion(
    const std::vector<RawVQARecord>& group);

Verdict stage1_classify(const JudgeClient& judge, const RawVQARecord& criterion,
                        const RawVQARecord& candidate, const ImageRef& image,
                        const PipelineConfig& config);

// Text-only re-judgment. For stage-1 in-scope candidates a "No" means the
// entailment is invisible to text alone (hard in-visual-scope); for
// out-of-scope candidates a "Yes" means text alone wrongly entails (hard
// out-of-visual-scope).
bool stage2_classify(const JudgeClient& judge, const RawVQARecord& criterion,
                     const RawVQARecord& candidate, bool in_scope_side,
                     const PipelineConfig& config);

std::string generate_rephrase(const ModelClient& rephraser, const std::string& question,
                              const PipelineConfig& config);

struct LocalityEntry {
  std::string question;
  std::string answer;
};

// Seeded draw-without-replacement over a pool file of {question, answer}.
class LocalityPool {
 public:
  LocalityPool(std::vector<LocalityEntry> entries, std::uint64_t seed);
  static LocalityPool from_file(const std::string& path, std::uint64_t seed);

  LocalityEntry draw();
  std::size_t remaining() const { return order_.size() - cursor_; }

 private:
  std::vector<LocalityEntry> entries_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

void attach_locality(DatasetRecord& record, LocalityPool& pool);

struct BuildStats {
  std::size_t groups = 0;
  std::size_t kept = 0;
  std::size_t dropped = 0;
  std::size_t candidates = 0;
  std::size_t placed = 0;
  std::size_t discarded_maybe = 0;
  std::size_t dropped_with_group = 0;
};

struct BuildLog {
  std::vector<std::string> lines;  // one JSON event per line
  BuildStats stats;
};

std::vector<DatasetRecord> assemble_records(const std::vector<RawGroup>& groups,
                                            const JudgeClient& judge,
                                            const ModelClient& rephraser, LocalityPool& pool,
                                            const PipelineConfig& config, BuildLog* log = nullptr);

struct SplitResult {
  std::vector<DatasetRecord> train;
  std::vector<DatasetRecord> test;
  bool degenerate = false;  // one side empty
};

SplitResult split(const std::vector<DatasetRecord>& records, const PipelineConfig& config);

std::vector<LocalityEntry> read_locality_pool(const std::string& path);

}  // namespace mscke

#endif  // MSCKE_DATASET_HPP_
