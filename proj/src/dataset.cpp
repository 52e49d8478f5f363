#include "mscke/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "httplib.h"
#include "json.hpp"
#include "mscke/evaluation.hpp"
#include "mscke/parallel.hpp"

namespace mscke {

using nlohmann::json;

std::string raw_record_id(const RawVQARecord& record) {
  return (record.image ? *record.image : std::string()) + "#" + std::to_string(record.order_index);
}

RawVQARecord parse_raw_vqa(const std::string& line, std::size_t line_number) {
  json j = json::parse(line, nullptr, false);
  std::string where = line_number ? " (line " + std::to_string(line_number) + ")" : "";
  if (j.is_discarded() || !j.is_object()) throw ParseError("malformed raw record" + where);
  RawVQARecord r;
  auto img = j.find("image");
  if (img == j.end()) throw ValidationError("missing field: image" + where);
  if (!img->is_null()) {
    if (!img->is_string()) throw ValidationError("image must be string or null" + where);
    r.image = img->get<std::string>();
    validate_image_ref(r.image, "image");
  }
  auto get_nonempty = [&](const char* name) {
    auto it = j.find(name);
    if (it == j.end() || !it->is_string() || it->get<std::string>().empty())
      throw ValidationError(std::string("field must be a non-empty string: ") + name + where);
    return it->get<std::string>();
  };
  r.question = get_nonempty("question");
  r.answer = get_nonempty("answer");
  auto oi = j.find("order_index");
  if (oi == j.end() || !oi->is_number_integer())
    throw ValidationError("field must be an integer: order_index" + where);
  r.order_index = oi->get<std::int64_t>();
  return r;
}

std::vector<RawVQARecord> read_raw_vqa_file(const std::string& path) {
  std::string text = read_text_file(path);
  std::vector<RawVQARecord> records;
  std::size_t line_number = 0;
  for (const std::string& line : split_lines(text)) {
    ++line_number;
    if (line.empty()) continue;
    records.push_back(parse_raw_vqa(line, line_number));
  }
  return records;
}

std::vector<RawGroup> group_raw_records(const std::vector<RawVQARecord>& records) {
  std::vector<RawGroup> groups;
  std::map<std::string, std::size_t> index;  // key -> position in groups
  for (const RawVQARecord& r : records) {
    std::string key = r.image ? *r.image : std::string("\x01null");
    auto it = index.find(key);
    if (it == index.end()) {
      index.emplace(key, groups.size());
      groups.push_back(RawGroup{r.image, {r}});
    } else {
      groups[it->second].records.push_back(r);
    }
  }
  return groups;
}

Verdict verdict_from_string(const std::string& s) {
  if (s == "Yes") return Verdict::kYes;
  if (s == "No") return Verdict::kNo;
  if (s == "Maybe") return Verdict::kMaybe;
  throw PipelineError("invalid judge verdict: " + s);
}

std::string verdict_name(Verdict v) {
  switch (v) {
    case Verdict::kYes: return "Yes";
    case Verdict::kNo: return "No";
    case Verdict::kMaybe: return "Maybe";
  }
  throw PipelineError("invalid verdict value");
}

ScriptedJudge::ScriptedJudge(const std::string& csv_path) {
  std::string text = read_text_file(csv_path);
  std::size_t line_number = 0;
  for (const std::string& line : split_lines(text)) {
    ++line_number;
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      std::size_t comma = line.find(',', start);
      if (comma == std::string::npos) {
        fields.push_back(line.substr(start));
        break;
      }
      fields.push_back(line.substr(start, comma - start));
      start = comma + 1;
    }
    if (fields.size() != 4)
      throw ParseError("scripted judge line " + std::to_string(line_number) +
                       " must have 4 fields: criterion_id,candidate_id,stage,verdict");
    int stage = 0;
    try {
      stage = std::stoi(fields[2]);
    } catch (...) {
      throw ParseError("scripted judge line " + std::to_string(line_number) + ": bad stage");
    }
    add_verdict(fields[0], fields[1], stage, verdict_from_string(fields[3]));
  }
}

void ScriptedJudge::add_verdict(const std::string& criterion_id, const std::string& candidate_id,
                                int stage, Verdict verdict) {
  table_[criterion_id + "|" + candidate_id + "|" + std::to_string(stage)] = verdict;
}

Verdict ScriptedJudge::judge(const JudgeRequest& request) const {
  auto it = table_.find(request.criterion_id + "|" + request.candidate_id + "|" +
                        std::to_string(request.stage));
  if (it == table_.end())
    throw PipelineError("scripted judge has no verdict for criterion " + request.criterion_id +
                        ", candidate " + request.candidate_id + ", stage " +
                        std::to_string(request.stage));
  return it->second;
}

HttpJudge::HttpJudge(std::string base_url, std::string bearer_token, double timeout_seconds)
    : base_url_(std::move(base_url)), bearer_token_(std::move(bearer_token)),
      timeout_seconds_(timeout_seconds) {}

Verdict HttpJudge::judge(const JudgeRequest& request) const {
  httplib::Client client(base_url_);
  auto seconds = static_cast<time_t>(timeout_seconds_);
  auto usec = static_cast<time_t>((timeout_seconds_ - static_cast<double>(seconds)) * 1e6);
  client.set_connection_timeout(seconds, usec);
  client.set_read_timeout(seconds, usec);
  httplib::Headers headers;
  if (!bearer_token_.empty()) headers.emplace("Authorization", "Bearer " + bearer_token_);
  json body{{"prompt", request.prompt},
            {"image", request.image ? json(*request.image) : json(nullptr)}};
  auto res = client.Post("/judge", headers, body.dump(), "application/json");
  if (!res)
    throw TransportError("judge request to " + base_url_ + " failed: " +
                         httplib::to_string(res.error()));
  if (res->status != 200)
    throw TransportError("judge request to " + base_url_ + " returned status " +
                         std::to_string(res->status));
  json parsed = json::parse(res->body, nullptr, false);
  if (parsed.is_discarded() || !parsed.contains("verdict") || !parsed["verdict"].is_string())
    throw PipelineError("judge response missing verdict");
  return verdict_from_string(parsed["verdict"].get<std::string>());
}

std::string compose_judge_prompt(const std::string& stage_prompt, const RawVQARecord& criterion,
                                 const RawVQARecord& candidate) {
  return stage_prompt + "\nQuestion 1: " + criterion.question + "\nAnswer 1: " + criterion.answer +
         "\nQuestion 2: " + candidate.question + "\nAnswer 2: " + candidate.answer;
}

std::pair<RawVQARecord, std::vector<RawVQARecord>> select_criterion(
    const std::vector<RawVQARecord>& group) {
  if (group.empty()) throw ValidationError("image group is empty");
  std::size_t best = 0;
  for (std::size_t i = 1; i < group.size(); ++i) {
    if (group[i].order_index < group[best].order_index) best = i;
  }
  std::vector<RawVQARecord> remainder;
  remainder.reserve(group.size() - 1);
  for (std::size_t i = 0; i < group.size(); ++i) {
    if (i != best) remainder.push_back(group[i]);
  }
  return {group[best], remainder};
}

Verdict stage1_classify(const JudgeClient& judge, const RawVQARecord& criterion,
                        const RawVQARecord& candidate, const ImageRef& image,
                        const PipelineConfig& config) {
  JudgeRequest request;
  request.prompt = compose_judge_prompt(config.prompt_stage1, criterion, candidate);
  request.image = image;
  request.criterion_id = raw_record_id(criterion);
  request.candidate_id = raw_record_id(candidate);
  request.stage = 1;
  return judge.judge(request);
}

bool stage2_classify(const JudgeClient& judge, const RawVQARecord& criterion,
                     const RawVQARecord& candidate, bool in_scope_side,
                     const PipelineConfig& config) {
  JudgeRequest request;
  request.prompt = compose_judge_prompt(config.prompt_stage2, criterion, candidate);
  request.image = std::nullopt;
  request.criterion_id = raw_record_id(criterion);
  request.candidate_id = raw_record_id(candidate);
  request.stage = 2;
  Verdict v = judge.judge(request);
  return in_scope_side ? (v == Verdict::kNo) : (v == Verdict::kYes);
}

std::string generate_rephrase(const ModelClient& rephraser, const std::string& question,
                              const PipelineConfig& config) {
  std::string prompt = config.prompt_rephrase + "\n" + question;
  for (int attempt = 0; attempt < 2; ++attempt) {
    std::string out = rephraser.generate(std::nullopt, prompt);
    if (!out.empty() && !exact_match(out, question)) return out;
  }
  throw PipelineError("rephraser failed to produce a distinct question for: " + question);
}

LocalityPool::LocalityPool(std::vector<LocalityEntry> entries, std::uint64_t seed)
    : entries_(std::move(entries)), order_(entries_.size()) {
  std::iota(order_.begin(), order_.end(), 0);
  Rng rng(hash_mix(seed, 0x6c6f63616cULL));
  rng.shuffle(order_);
}

LocalityPool LocalityPool::from_file(const std::string& path, std::uint64_t seed) {
  return LocalityPool(read_locality_pool(path), seed);
}

LocalityEntry LocalityPool::draw() {
  if (cursor_ >= order_.size()) throw PipelineError("locality pool exhausted");
  return entries_[order_[cursor_++]];
}

void attach_locality(DatasetRecord& record, LocalityPool& pool) {
  LocalityEntry e = pool.draw();
  record.locality_prompt = e.question;
  record.locality_truth = e.answer;
}

std::vector<LocalityEntry> read_locality_pool(const std::string& path) {
  std::string text = read_text_file(path);
  std::vector<LocalityEntry> pool;
  std::size_t line_number = 0;
  for (const std::string& line : split_lines(text)) {
    ++line_number;
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object())
      throw ParseError("malformed locality pool line " + std::to_string(line_number));
    auto q = j.find("question");
    auto a = j.find("answer");
    if (q == j.end() || !q->is_string() || q->get<std::string>().empty() || a == j.end() ||
        !a->is_string() || a->get<std::string>().empty())
      throw ValidationError("locality pool line " + std::to_string(line_number) +
                            " needs non-empty question and answer");
    pool.push_back(LocalityEntry{q->get<std::string>(), a->get<std::string>()});
  }
  return pool;
}

namespace {

std::string log_event(std::initializer_list<std::pair<const char*, json>> fields) {
  json j = json::object();
  for (const auto& [k, v] : fields) j[k] = v;
  return j.dump();
}

}  // namespace

std::vector<DatasetRecord> assemble_records(const std::vector<RawGroup>& groups,
                                            const JudgeClient& judge,
                                            const ModelClient& rephraser, LocalityPool& pool,
                                            const PipelineConfig& config, BuildLog* log) {
  std::vector<DatasetRecord> records;
  BuildLog local_log;
  BuildLog& out_log = log ? *log : local_log;

  for (const RawGroup& group : groups) {
    ++out_log.stats.groups;
    std::string group_name = group.image ? *group.image : std::string("<null>");
    auto [criterion, remainder] = select_criterion(group.records);
    out_log.stats.candidates += remainder.size();

    // Stage 1 over all candidates; judge calls for distinct candidates may
    // run concurrently, routing stays in input order.
    std::vector<Verdict> stage1(remainder.size(), Verdict::kMaybe);
    parallel_for(remainder.size(), true, [&](std::size_t i) {
      stage1[i] = stage1_classify(judge, criterion, remainder[i], group.image, config);
    });

    std::vector<const RawVQARecord*> in_cands, out_cands;
    for (std::size_t i = 0; i < remainder.size(); ++i) {
      switch (stage1[i]) {
        case Verdict::kYes:
          in_cands.push_back(&remainder[i]);
          break;
        case Verdict::kNo:
          out_cands.push_back(&remainder[i]);
          break;
        case Verdict::kMaybe:
          ++out_log.stats.discarded_maybe;
          out_log.lines.push_back(log_event({{"event", "discard"},
                                             {"group", group_name},
                                             {"candidate", raw_record_id(remainder[i])},
                                             {"stage", 1},
                                             {"verdict", "Maybe"}}));
          break;
      }
    }

    std::vector<unsigned char> in_hard(in_cands.size(), 0), out_hard(out_cands.size(), 0);
    parallel_for(in_cands.size(), true, [&](std::size_t i) {
      in_hard[i] = stage2_classify(judge, criterion, *in_cands[i], true, config) ? 1 : 0;
    });
    parallel_for(out_cands.size(), true, [&](std::size_t i) {
      out_hard[i] = stage2_classify(judge, criterion, *out_cands[i], false, config) ? 1 : 0;
    });

    bool any_hard_in = std::find(in_hard.begin(), in_hard.end(), 1) != in_hard.end();
    bool any_hard_out = std::find(out_hard.begin(), out_hard.end(), 1) != out_hard.end();

    auto drop_group = [&](const char* reason) {
      ++out_log.stats.dropped;
      out_log.stats.dropped_with_group += in_cands.size() + out_cands.size();
      out_log.lines.push_back(
          log_event({{"event", "drop"}, {"group", group_name}, {"reason", reason}}));
    };

    if (!any_hard_in && !any_hard_out) {
      drop_group("no_hard_entries");
      continue;
    }
    if (in_cands.empty()) {
      drop_group("no_in_scope_entries");
      continue;
    }
    if (out_cands.empty()) {
      drop_group("no_out_scope_entries");
      continue;
    }

    DatasetRecord record;
    record.image = group.image;
    record.edit_prompt = criterion.question;
    record.edit_target = criterion.answer;
    record.hard_in = any_hard_in;
    record.hard_out = any_hard_out;
    // A side with hard entries keeps only those; otherwise the non-hard
    // entries of the same side substitute.
    for (std::size_t i = 0; i < in_cands.size(); ++i) {
      if (any_hard_in && !in_hard[i]) continue;
      record.in_scope.push_back(ScopeEntryIn{in_cands[i]->question, in_cands[i]->answer});
    }
    for (std::size_t i = 0; i < out_cands.size(); ++i) {
      if (any_hard_out && !out_hard[i]) continue;
      record.out_scope.push_back(ScopeEntryOut{out_cands[i]->question});
    }
    record.rephrase_prompt = generate_rephrase(rephraser, criterion.question, config);
    attach_locality(record, pool);

    out_log.stats.placed += in_cands.size() + out_cands.size();
    ++out_log.stats.kept;
    records.push_back(std::move(record));
  }
  return records;
}

SplitResult split(const std::vector<DatasetRecord>& records, const PipelineConfig& config) {
  SplitResult out;
  if (records.empty()) {
    out.degenerate = true;
    return out;
  }
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(hash_mix(config.seed, 0x73706c6974ULL));
  rng.shuffle(order);
  std::size_t n_train = static_cast<std::size_t>(
      std::llround(config.train_fraction * static_cast<double>(records.size())));
  n_train = std::min(n_train, records.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (i < n_train) out.train.push_back(records[order[i]]);
    else out.test.push_back(records[order[i]]);
  }
  out.degenerate = out.train.empty() || out.test.empty();
  return out;
}

}  // namespace mscke
