#ifndef MSCKE_CORE_HPP_
#define MSCKE_CORE_HPP_

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mscke/util.hpp"

namespace mscke {

// Opaque image reference, resolvable by an embedding provider. Absent image
// is encoded as JSON null; a present value must be a non-empty string with
// no control characters.
using ImageRef = std::optional<std::string>;

void validate_image_ref(const ImageRef& image, const std::string& field);

struct EditExample {
  ImageRef image;
  std::string prompt;  // question whose answer is being corrected
  std::string target;  // desired answer
  std::string id;      // unique within a memory

  bool operator==(const EditExample&) const = default;
};

struct QueryInput {
  ImageRef image;  // may be absent for text-only queries
  std::string prompt;

  bool operator==(const QueryInput&) const = default;
};

struct ScopeEntryIn {
  std::string prompt;
  std::string target;  // corrected post-edit answer for this in-scope probe
  bool operator==(const ScopeEntryIn&) const = default;
};

struct ScopeEntryOut {
  std::string prompt;
  bool operator==(const ScopeEntryOut&) const = default;
};

// One benchmark row. rephrase_prompt may be empty (such records are skipped
// for the generality metric); the scope lists may be empty on a hand-written
// file, the builder pipeline always emits at least one entry per side.
struct DatasetRecord {
  ImageRef image;
  std::string edit_prompt;
  std::string edit_target;
  std::string rephrase_prompt;
  std::string locality_prompt;
  std::string locality_truth;
  std::vector<ScopeEntryIn> in_scope;
  std::vector<ScopeEntryOut> out_scope;
  bool hard_in = false;
  bool hard_out = false;

  bool operator==(const DatasetRecord&) const = default;
};

// Aggregated metric values. A component is null (unset) when no probe of its
// kind was evaluated; it is never reported as 0 in that case.
struct MetricsReport {
  std::optional<double> reliability;
  std::optional<double> locality;
  std::optional<double> generality;
  std::optional<double> specificity;
  std::optional<double> spec_in;
  std::optional<double> spec_out;
  std::map<std::string, std::size_t> counts;
  std::vector<std::size_t> skipped;  // record indices skipped for generality
  std::uint64_t seed = 0;
};

// JSONL schema ops. Serialization uses sorted keys and UTF-8 pass-through so
// files are byte-stable and diff-friendly.
DatasetRecord parse_record(const std::string& line, std::size_t line_number = 0);
std::string serialize_record(const DatasetRecord& record);

std::vector<DatasetRecord> read_dataset_file(const std::string& path);
void write_dataset_file(const std::string& path, const std::vector<DatasetRecord>& records);

EditExample parse_edit_example(const std::string& line, std::size_t line_number = 0);
std::string serialize_edit_example(const EditExample& edit);

}  // namespace mscke

#endif  // MSCKE_CORE_HPP_
