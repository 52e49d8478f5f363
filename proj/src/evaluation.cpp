#include "mscke/evaluation.hpp"

#include "json.hpp"
#include "mscke/parallel.hpp"

namespace mscke {

using nlohmann::json;

std::string normalize_answer(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (unsigned char c : s) {
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v') {
      if (!out.empty() && out.back() != ' ') out.push_back(' ');
      continue;
    }
    if (c >= 'A' && c <= 'Z') c = static_cast<unsigned char>(c - 'A' + 'a');
    out.push_back(static_cast<char>(c));
  }
  while (!out.empty() && out.back() == ' ') out.pop_back();
  if (!out.empty() && out.back() == '.') out.pop_back();
  while (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

bool exact_match(const std::string& a, const std::string& b) {
  return normalize_answer(a) == normalize_answer(b);
}

MatchMode match_mode_from_string(const std::string& name) {
  if (name == "normalized_exact") return MatchMode::kNormalizedExact;
  throw ConfigError("unknown match mode: " + name);
}

namespace {

void require_context(const EvalContext& ctx) {
  if (!ctx.head || !ctx.provider || !ctx.base || !ctx.counterfactual)
    throw ConfigError("evaluation context is incomplete");
}

void require_nonempty(const std::vector<DatasetRecord>& records) {
  if (records.empty()) throw ValidationError("dataset is empty");
}

Engine make_record_engine(const EvalContext& ctx, const DatasetRecord& record, std::size_t index) {
  Engine engine(MemoryStore{}, *ctx.head, *ctx.provider, *ctx.base, *ctx.counterfactual,
                ctx.prompt_template);
  EditExample edit;
  edit.image = record.image;
  edit.prompt = record.edit_prompt;
  edit.target = record.edit_target;
  edit.id = "r" + std::to_string(index);
  engine.apply_edit(edit);
  return engine;
}

}  // namespace

double eval_reliability(const EvalContext& ctx, const std::vector<DatasetRecord>& records) {
  require_context(ctx);
  require_nonempty(records);
  std::vector<unsigned char> hit(records.size(), 0);
  parallel_for(records.size(), true, [&](std::size_t i) {
    Engine engine = make_record_engine(ctx, records[i], i);
    Answer a = engine.answer(QueryInput{records[i].image, records[i].edit_prompt});
    hit[i] = exact_match(a.text, records[i].edit_target) ? 1 : 0;
  });
  std::size_t correct = 0;
  for (unsigned char h : hit) correct += h;
  return static_cast<double>(correct) / static_cast<double>(records.size());
}

double eval_locality(const EvalContext& ctx, const std::vector<DatasetRecord>& records) {
  require_context(ctx);
  require_nonempty(records);
  std::vector<unsigned char> hit(records.size(), 0);
  parallel_for(records.size(), true, [&](std::size_t i) {
    Engine engine = make_record_engine(ctx, records[i], i);
    // Locality probes are text-only; stability means the post-edit answer
    // equals the frozen base model's answer, not the ground truth.
    QueryInput probe{std::nullopt, records[i].locality_prompt};
    Answer post = engine.answer(probe);
    std::string pre = ctx.base->generate(probe.image, probe.prompt);
    hit[i] = exact_match(post.text, pre) ? 1 : 0;
  });
  std::size_t correct = 0;
  for (unsigned char h : hit) correct += h;
  return static_cast<double>(correct) / static_cast<double>(records.size());
}

std::optional<double> eval_generality(const EvalContext& ctx,
                                      const std::vector<DatasetRecord>& records,
                                      std::vector<std::size_t>* skipped_out) {
  require_context(ctx);
  require_nonempty(records);
  std::vector<signed char> hit(records.size(), -1);  // -1 = skipped
  parallel_for(records.size(), true, [&](std::size_t i) {
    if (records[i].rephrase_prompt.empty()) return;
    Engine engine = make_record_engine(ctx, records[i], i);
    Answer rephrased = engine.answer(QueryInput{records[i].image, records[i].rephrase_prompt});
    Answer original = engine.answer(QueryInput{records[i].image, records[i].edit_prompt});
    hit[i] = exact_match(rephrased.text, original.text) ? 1 : 0;
  });
  std::size_t correct = 0, total = 0;
  for (std::size_t i = 0; i < hit.size(); ++i) {
    if (hit[i] < 0) {
      if (skipped_out) skipped_out->push_back(i);
      continue;
    }
    ++total;
    correct += static_cast<std::size_t>(hit[i]);
  }
  if (total == 0) return std::nullopt;
  return static_cast<double>(correct) / static_cast<double>(total);
}

SpecificityResult eval_specificity(const EvalContext& ctx,
                                   const std::vector<DatasetRecord>& records) {
  require_context(ctx);
  require_nonempty(records);
  struct Slot {
    std::size_t in_correct = 0, in_total = 0;
    std::size_t out_correct = 0, out_total = 0;
  };
  std::vector<Slot> slots(records.size());
  parallel_for(records.size(), true, [&](std::size_t i) {
    const DatasetRecord& r = records[i];
    Engine engine = make_record_engine(ctx, r, i);
    Slot& s = slots[i];
    for (const ScopeEntryIn& e : r.in_scope) {
      Answer a = engine.answer(QueryInput{r.image, e.prompt});
      ++s.in_total;
      if (exact_match(a.text, e.target)) ++s.in_correct;
    }
    for (const ScopeEntryOut& e : r.out_scope) {
      Answer a = engine.answer(QueryInput{r.image, e.prompt});
      std::string pre = ctx.base->generate(r.image, e.prompt);
      ++s.out_total;
      if (exact_match(a.text, pre)) ++s.out_correct;
    }
  });

  SpecificityResult out;
  std::size_t in_correct = 0, out_correct = 0;
  for (const Slot& s : slots) {
    in_correct += s.in_correct;
    out.in_total += s.in_total;
    out_correct += s.out_correct;
    out.out_total += s.out_total;
  }
  if (out.in_total > 0)
    out.spec_in = static_cast<double>(in_correct) / static_cast<double>(out.in_total);
  if (out.out_total > 0)
    out.spec_out = static_cast<double>(out_correct) / static_cast<double>(out.out_total);
  // Undefined components stay null rather than faking a 0.
  if (out.spec_in && out.spec_out) out.specificity = (*out.spec_in + *out.spec_out) / 2.0;
  return out;
}

MetricsReport run_report(const EvalContext& ctx, const std::string& dataset_path,
                         const EvalConfig& config) {
  require_context(ctx);
  std::vector<DatasetRecord> records = read_dataset_file(dataset_path);
  require_nonempty(records);

  MetricsReport report;
  report.seed = config.seed;
  report.reliability = eval_reliability(ctx, records);
  report.counts["reliability"] = records.size();
  report.locality = eval_locality(ctx, records);
  report.counts["locality"] = records.size();
  report.generality = eval_generality(ctx, records, &report.skipped);
  report.counts["generality"] = records.size() - report.skipped.size();
  SpecificityResult spec = eval_specificity(ctx, records);
  report.specificity = spec.specificity;
  report.spec_in = spec.spec_in;
  report.spec_out = spec.spec_out;
  report.counts["spec_in"] = spec.in_total;
  report.counts["spec_out"] = spec.out_total;

  if (!config.report_path.empty())
    write_text_file(config.report_path, report_to_json(report, config));
  return report;
}

std::string report_to_json(const MetricsReport& report, const EvalConfig& config) {
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  json j;
  j["reliability"] = opt(report.reliability);
  j["locality"] = opt(report.locality);
  j["generality"] = opt(report.generality);
  j["specificity"] = opt(report.specificity);
  j["spec_in"] = opt(report.spec_in);
  j["spec_out"] = opt(report.spec_out);
  json counts = json::object();
  for (const auto& [k, v] : report.counts) counts[k] = v;
  j["counts"] = std::move(counts);
  j["skipped"] = report.skipped;
  j["seed"] = report.seed;
  json echo = json::object();
  echo["match_mode"] = "normalized_exact";
  echo["threshold"] = 0.5;
  for (const auto& [k, v] : config.config_echo) echo[k] = v;
  j["config"] = std::move(echo);
  return j.dump(2) + "\n";
}

}  // namespace mscke
