// Command-line front end: train, edit, query, eval, build-dataset,
// gradcheck, ablate. Machine-readable JSON goes to stdout, human summaries
// to stderr. Exit codes: 0 success, 1 check failure, 2 usage/validation,
// 3 transport.
#include <filesystem>
#include <iostream>
#include <memory>
#include <set>

#include "CLI11.hpp"
#include "json.hpp"
#include "mscke/dataset.hpp"
#include "mscke/evaluation.hpp"

using namespace mscke;
using nlohmann::json;

namespace {

namespace fs = std::filesystem;

struct Settings {
  std::uint64_t seed = 0;
  std::string provider = "toy";
  std::string client = "mock";
  std::string fusion = "dot_attention";
  std::size_t d = 32;
  std::size_t d_raw = 64;
  std::size_t patch_count = 8;
  double lr = 0.05;
  std::size_t batch = 32;
  std::size_t epochs = 20;
  double threshold = 0.5;
  std::string match_mode = "normalized_exact";
  std::string prompt_template = kDefaultPromptTemplate;
  std::string embed_table;
  std::string embed_url;
  std::string base_table;
  std::string cf_table;
  std::string base_url;
  std::string cf_url;
  std::string judge_url;
  std::string bearer;
};

// key = value lines, '#' comments; unknown keys are rejected.
void apply_config_file(const std::string& path, Settings& s) {
  static const std::set<std::string> known = {
      "seed",     "provider",   "client",     "fusion",     "d",        "d_raw",
      "patch_count", "lr",      "batch",      "epochs",     "threshold", "match_mode",
      "template", "embed_table", "embed_url", "base_table", "cf_table", "base_url",
      "cf_url",   "judge_url",  "bearer"};
  std::string text = read_text_file(path);
  std::size_t line_number = 0;
  for (const std::string& raw_line : split_lines(text)) {
    ++line_number;
    std::string line = raw_line;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    auto trim = [](std::string v) {
      while (!v.empty() && (v.front() == ' ' || v.front() == '\t')) v.erase(v.begin());
      while (!v.empty() && (v.back() == ' ' || v.back() == '\t')) v.pop_back();
      return v;
    };
    line = trim(line);
    if (line.empty()) continue;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_number) + " is not key=value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (!known.count(key))
      throw ConfigError("unknown config key: " + key + " (line " + std::to_string(line_number) +
                        ")");
    try {
      if (key == "seed") s.seed = std::stoull(value);
      else if (key == "provider") s.provider = value;
      else if (key == "client") s.client = value;
      else if (key == "fusion") s.fusion = value;
      else if (key == "d") s.d = std::stoul(value);
      else if (key == "d_raw") s.d_raw = std::stoul(value);
      else if (key == "patch_count") s.patch_count = std::stoul(value);
      else if (key == "lr") s.lr = std::stod(value);
      else if (key == "batch") s.batch = std::stoul(value);
      else if (key == "epochs") s.epochs = std::stoul(value);
      else if (key == "threshold") s.threshold = std::stod(value);
      else if (key == "match_mode") s.match_mode = value;
      else if (key == "template") s.prompt_template = value;
      else if (key == "embed_table") s.embed_table = value;
      else if (key == "embed_url") s.embed_url = value;
      else if (key == "base_table") s.base_table = value;
      else if (key == "cf_table") s.cf_table = value;
      else if (key == "base_url") s.base_url = value;
      else if (key == "cf_url") s.cf_url = value;
      else if (key == "judge_url") s.judge_url = value;
      else if (key == "bearer") s.bearer = value;
    } catch (const std::invalid_argument&) {
      throw ConfigError("config key " + key + " has a malformed value: " + value);
    } catch (const std::out_of_range&) {
      throw ConfigError("config key " + key + " has an out-of-range value: " + value);
    }
  }
}

std::unique_ptr<EmbeddingProvider> make_provider(const Settings& s) {
  if (s.provider == "toy") return std::make_unique<ToyProvider>(s.seed, s.d_raw, s.patch_count);
  if (s.provider == "table") {
    if (s.embed_table.empty()) throw ConfigError("table provider needs embed_table");
    return std::make_unique<TableProvider>(s.embed_table);
  }
  if (s.provider == "http") {
    if (s.embed_url.empty()) throw ConfigError("http provider needs embed_url");
    return std::make_unique<HttpProvider>(s.embed_url, s.d_raw, s.patch_count);
  }
  throw ConfigError("unknown provider: " + s.provider);
}

std::unique_ptr<ModelClient> make_client(const Settings& s, const std::string& role) {
  if (s.client == "mock") {
    auto client = std::make_unique<MockModelClient>(role);
    const std::string& table = role == "base" ? s.base_table : s.cf_table;
    if (!table.empty()) client->load_table(table);
    return client;
  }
  if (s.client == "http") {
    const std::string& url = role == "base" ? s.base_url : s.cf_url;
    if (url.empty()) throw ConfigError("http client needs base_url/cf_url");
    return std::make_unique<HttpModelClient>(role, url);
  }
  throw ConfigError("unknown client: " + s.client);
}

json settings_echo(const Settings& s) {
  json j;
  j["seed"] = s.seed;
  j["provider"] = s.provider;
  j["client"] = s.client;
  j["fusion"] = s.fusion;
  j["d"] = s.d;
  j["d_raw"] = s.d_raw;
  j["patch_count"] = s.patch_count;
  j["lr"] = s.lr;
  j["batch"] = s.batch;
  j["epochs"] = s.epochs;
  j["threshold"] = s.threshold;
  j["match_mode"] = s.match_mode;
  return j;
}

void warn_nonconformant(const Settings& s) {
  if (s.threshold != 0.5)
    std::cerr << "warning: threshold " << s.threshold
              << " is non-conformant (the method fixes 0.5)\n";
}

TrainConfig train_config(const Settings& s) {
  TrainConfig config;
  config.learning_rate = s.lr;
  config.batch_size = s.batch;
  config.epochs = s.epochs;
  config.seed = s.seed;
  config.fusion_mode = fusion_mode_from_string(s.fusion);
  config.d = s.d;
  return config;
}

int cmd_train(const Settings& s, const std::string& data_path, const std::string& out_path,
              const std::string& trace_path) {
  auto provider = make_provider(s);
  std::vector<TrainPair> pairs = read_train_pairs(data_path);
  if (pairs.empty()) throw ValidationError("no training pairs in " + data_path);
  TrainResult result = train(pairs, *provider, train_config(s));
  save_head(result.head, out_path);

  if (!trace_path.empty()) {
    std::string csv = "epoch,loss\n";
    for (std::size_t e = 0; e < result.epoch_losses.size(); ++e)
      csv += std::to_string(e) + "," + std::to_string(result.epoch_losses[e]) + "\n";
    write_text_file(trace_path, csv);
  }

  json out;
  out["command"] = "train";
  out["config"] = settings_echo(s);
  out["pairs"] = pairs.size();
  out["head"] = out_path;
  out["fingerprint"] = to_hex16(head_fingerprint(result.head));
  out["final_loss"] = result.epoch_losses.back();
  std::cout << out.dump(2) << "\n";
  std::cerr << "trained " << pairs.size() << " pairs, final loss " << result.epoch_losses.back()
            << ", head -> " << out_path << "\n";
  return 0;
}

int cmd_edit(const Settings& s, const std::string& memory_dir, const std::string& head_path,
             const std::string& edit_path) {
  auto provider = make_provider(s);
  AlignmentHead head = load_head(head_path);
  MemoryStore store;
  if (fs::exists(fs::path(memory_dir) / "edits.jsonl")) store = load_memory(memory_dir);

  std::string line = read_text_file(edit_path);
  while (!line.empty() && (line.back() == '\n' || line.back() == '\r')) line.pop_back();
  EditExample edit = parse_edit_example(line);
  add_edit(store, edit, head, *provider);
  save_memory(store, memory_dir);

  json out;
  out["command"] = "edit";
  out["config"] = settings_echo(s);
  out["id"] = edit.id;
  out["memory_size"] = store.size();
  std::cout << out.dump(2) << "\n";
  std::cerr << "edit " << edit.id << " stored; memory holds " << store.size() << " entries\n";
  return 0;
}

int cmd_query(const Settings& s, const std::string& memory_dir, const std::string& head_path,
              const std::string& prompt, const std::string& image) {
  warn_nonconformant(s);
  auto provider = make_provider(s);
  auto base = make_client(s, "base");
  auto cf = make_client(s, "counterfactual");
  AlignmentHead head = load_head(head_path);
  MemoryStore store;
  if (fs::exists(fs::path(memory_dir) / "edits.jsonl")) store = load_memory(memory_dir);

  Engine engine(std::move(store), std::move(head), *provider, *base, *cf, s.prompt_template,
                s.threshold);
  QueryInput query;
  query.prompt = prompt;
  if (!image.empty()) query.image = image;
  Answer answer = engine.answer(query);

  json out;
  out["command"] = "query";
  out["config"] = settings_echo(s);
  out["text"] = answer.text;
  out["route"] = route_name(answer.route);
  out["rho"] = answer.decision.rho;
  out["k_star"] =
      answer.decision.k_star ? json(*answer.decision.k_star) : json(nullptr);
  out["used_edit"] = answer.used_edit ? json(*answer.used_edit) : json(nullptr);
  std::cout << out.dump(2) << "\n";
  std::cerr << "route " << route_name(answer.route) << " rho " << answer.decision.rho << "\n";
  return 0;
}

int cmd_eval(const Settings& s, const std::string& dataset_path, const std::string& head_path,
             const std::string& report_path) {
  warn_nonconformant(s);
  (void)match_mode_from_string(s.match_mode);
  auto provider = make_provider(s);
  auto base = make_client(s, "base");
  auto cf = make_client(s, "counterfactual");
  AlignmentHead head = load_head(head_path);

  EvalContext ctx;
  ctx.head = &head;
  ctx.provider = provider.get();
  ctx.base = base.get();
  ctx.counterfactual = cf.get();
  ctx.prompt_template = s.prompt_template;

  EvalConfig config;
  config.match_mode = match_mode_from_string(s.match_mode);
  config.report_path = report_path;
  config.seed = s.seed;
  config.config_echo["provider"] = s.provider;
  config.config_echo["client"] = s.client;
  config.config_echo["fusion"] = s.fusion;
  config.config_echo["head"] = head_path;
  config.config_echo["dataset"] = dataset_path;

  MetricsReport report = run_report(ctx, dataset_path, config);
  std::cout << report_to_json(report, config);
  auto show = [](const std::optional<double>& v) {
    return v ? std::to_string(*v) : std::string("null");
  };
  std::cerr << "rel=" << show(report.reliability) << " loc=" << show(report.locality)
            << " gen=" << show(report.generality) << " spec=" << show(report.specificity) << "\n";
  return 0;
}

// Built-in fallback rephraser: deterministic suffix transform.
class SuffixRephraser : public ModelClient {
 public:
  std::string name() const override { return "suffix"; }
  std::string generate(const ImageRef&, const std::string& prompt) const override {
    std::size_t nl = prompt.find('\n');
    std::string question = nl == std::string::npos ? prompt : prompt.substr(nl + 1);
    return question + " (rephrased)";
  }
};

int cmd_build_dataset(const Settings& s, const std::string& raw_path, const std::string& pool_path,
                      const std::string& out_dir, const std::string& judge_csv,
                      const std::string& rephrase_table, double train_fraction) {
  PipelineConfig config;
  config.seed = s.seed;
  config.train_fraction = train_fraction;
  if (train_fraction != 0.75)
    std::cerr << "warning: train fraction " << train_fraction
              << " is non-conformant (the benchmark fixes 3:1)\n";

  std::unique_ptr<JudgeClient> judge;
  if (!judge_csv.empty()) judge = std::make_unique<ScriptedJudge>(judge_csv);
  else if (!s.judge_url.empty()) judge = std::make_unique<HttpJudge>(s.judge_url, s.bearer);
  else throw ConfigError("build-dataset needs --judge-csv or judge_url");

  std::unique_ptr<ModelClient> rephraser;
  if (!rephrase_table.empty()) {
    auto mock = std::make_unique<MockModelClient>("rephraser");
    mock->load_table(rephrase_table);
    rephraser = std::move(mock);
  } else {
    rephraser = std::make_unique<SuffixRephraser>();
  }

  std::vector<RawGroup> groups = group_raw_records(read_raw_vqa_file(raw_path));
  LocalityPool pool = LocalityPool::from_file(pool_path, s.seed);
  BuildLog log;
  std::vector<DatasetRecord> records =
      assemble_records(groups, *judge, *rephraser, pool, config, &log);
  SplitResult parts = split(records, config);
  if (parts.degenerate) std::cerr << "warning: degenerate split (one side is empty)\n";

  fs::create_directories(out_dir);
  write_dataset_file((fs::path(out_dir) / "train.jsonl").string(), parts.train);
  write_dataset_file((fs::path(out_dir) / "test.jsonl").string(), parts.test);
  std::string log_text;
  for (const std::string& l : log.lines) log_text += l + "\n";
  write_text_file((fs::path(out_dir) / "build_log.jsonl").string(), log_text);

  json out;
  out["command"] = "build-dataset";
  out["config"] = settings_echo(s);
  out["groups"] = log.stats.groups;
  out["kept"] = log.stats.kept;
  out["dropped"] = log.stats.dropped;
  out["candidates"] = log.stats.candidates;
  out["placed"] = log.stats.placed;
  out["discarded_maybe"] = log.stats.discarded_maybe;
  out["dropped_with_group"] = log.stats.dropped_with_group;
  out["records"] = records.size();
  out["train"] = parts.train.size();
  out["test"] = parts.test.size();
  out["out_dir"] = out_dir;
  std::cout << out.dump(2) << "\n";
  std::cerr << "built " << records.size() << " records (" << parts.train.size() << " train / "
            << parts.test.size() << " test) from " << log.stats.groups << " groups\n";
  return 0;
}

int cmd_gradcheck(const Settings& s, std::size_t seeds, std::size_t samples, double eps,
                  double tolerance) {
  auto provider = make_provider(s);

  // small synthetic batch shared across seeds
  std::vector<TrainPair> batch;
  for (int i = 0; i < 2; ++i) {
    TrainPair pair;
    std::string tag = std::to_string(i);
    pair.edit = EditExample{ImageRef{"gc-img-" + tag}, "stored fact " + tag, "value " + tag,
                            "gc-" + tag};
    pair.in_query = QueryInput{ImageRef{"gc-img-" + tag}, "about fact " + tag};
    pair.out_query = QueryInput{ImageRef{"gc-other-" + tag}, "something else " + tag};
    batch.push_back(std::move(pair));
  }

  double worst = 0.0;
  json modes = json::array();
  for (FusionMode mode :
       {FusionMode::kConcat, FusionMode::kCrossAttention, FusionMode::kDotAttention}) {
    for (std::size_t seed = 0; seed < seeds; ++seed) {
      AlignmentHead head = make_head(mode, provider->d_raw(), s.d, s.seed + seed);
      GradCheckReport report = grad_check(head, *provider, batch, samples, seed, eps);
      worst = std::max(worst, report.max_rel_err);
      modes.push_back(json{{"fusion", fusion_mode_name(mode)},
                           {"seed", s.seed + seed},
                           {"max_rel_err", report.max_rel_err},
                           {"coordinates", report.coordinates}});
    }
  }
  bool ok = worst < tolerance;
  json out;
  out["command"] = "gradcheck";
  out["config"] = settings_echo(s);
  out["eps"] = eps;
  out["tolerance"] = tolerance;
  out["max_rel_err"] = worst;
  out["runs"] = modes;
  out["pass"] = ok;
  std::cout << out.dump(2) << "\n";
  std::cerr << "gradcheck max relative error " << worst << (ok ? " (pass)" : " (FAIL)") << "\n";
  return ok ? 0 : 1;
}

int cmd_ablate(const Settings& s, const std::string& train_path, const std::string& test_path,
               const std::string& out_csv) {
  auto provider = make_provider(s);
  std::vector<TrainPair> train_pairs = read_train_pairs(train_path);
  std::vector<TrainPair> test_pairs = read_train_pairs(test_path);
  std::vector<AblationRow> rows =
      run_fusion_ablation(train_pairs, test_pairs, *provider, train_config(s));

  std::string csv = "fusion_mode,held_out_accuracy,final_loss\n";
  json jrows = json::array();
  for (const AblationRow& row : rows) {
    csv += fusion_mode_name(row.mode) + "," + std::to_string(row.held_out_accuracy) + "," +
           std::to_string(row.final_loss) + "\n";
    jrows.push_back(json{{"fusion", fusion_mode_name(row.mode)},
                         {"held_out_accuracy", row.held_out_accuracy},
                         {"final_loss", row.final_loss}});
  }
  if (!out_csv.empty()) write_text_file(out_csv, csv);

  json out;
  out["command"] = "ablate";
  out["config"] = settings_echo(s);
  out["rows"] = jrows;
  out["csv"] = out_csv;
  std::cout << out.dump(2) << "\n";
  std::cerr << csv;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"memory-based multimodal knowledge editing engine"};
  app.require_subcommand(1);
  app.fallthrough(true);  // global flags may follow the subcommand

  Settings settings;
  std::string config_path;
  app.add_option("--config", config_path, "key=value config file");
  auto* seed_opt = app.add_option("--seed", settings.seed, "global seed");
  auto* provider_opt =
      app.add_option("--provider", settings.provider, "embedding provider: toy|table|http");
  auto* client_opt = app.add_option("--client", settings.client, "model clients: mock|http");
  auto* fusion_opt =
      app.add_option("--fusion", settings.fusion, "fusion: concat|cross_attention|dot_attention");
  auto* d_opt = app.add_option("--d", settings.d, "shared space dimension");
  auto* draw_opt = app.add_option("--d-raw", settings.d_raw, "raw feature dimension");
  auto* patch_opt = app.add_option("--patch-count", settings.patch_count, "toy patches per image");
  auto* lr_opt = app.add_option("--lr", settings.lr, "learning rate");
  auto* batch_opt = app.add_option("--batch", settings.batch, "batch size");
  auto* epochs_opt = app.add_option("--epochs", settings.epochs, "epochs");
  auto* threshold_opt = app.add_option("--threshold", settings.threshold, "scope threshold");
  auto* match_opt = app.add_option("--match-mode", settings.match_mode, "answer match mode");
  app.add_option("--embed-table", settings.embed_table, "sidecar for the table provider");
  app.add_option("--embed-url", settings.embed_url, "embedding service url");
  app.add_option("--base-table", settings.base_table, "mock base client table (jsonl)");
  app.add_option("--cf-table", settings.cf_table, "mock counterfactual client table (jsonl)");
  app.add_option("--base-url", settings.base_url, "base model service url");
  app.add_option("--cf-url", settings.cf_url, "counterfactual model service url");
  app.add_option("--judge-url", settings.judge_url, "judge service url");
  app.add_option("--bearer", settings.bearer, "bearer token for the judge service");
  app.add_option("--template", settings.prompt_template, "counterfactual prompt template");

  std::string data_path, out_path, trace_path;
  auto* sub_train = app.add_subcommand("train", "train the scope classifier");
  sub_train->add_option("--data", data_path, "train pair jsonl")->required();
  sub_train->add_option("--out", out_path, "output head file")->required();
  sub_train->add_option("--trace", trace_path, "loss trace csv");

  std::string memory_dir, head_path, edit_path;
  auto* sub_edit = app.add_subcommand("edit", "store one edit example");
  sub_edit->add_option("--memory", memory_dir, "memory directory")->required();
  sub_edit->add_option("--head", head_path, "head file")->required();
  sub_edit->add_option("--edit-file", edit_path, "edit example json file")->required();

  std::string prompt, image;
  auto* sub_query = app.add_subcommand("query", "answer one query through the engine");
  sub_query->add_option("--memory", memory_dir, "memory directory")->required();
  sub_query->add_option("--head", head_path, "head file")->required();
  sub_query->add_option("--prompt", prompt, "query prompt")->required();
  sub_query->add_option("--image", image, "query image id");

  std::string dataset_path, report_path;
  auto* sub_eval = app.add_subcommand("eval", "evaluate a dataset file");
  sub_eval->add_option("--dataset", dataset_path, "dataset jsonl")->required();
  sub_eval->add_option("--head", head_path, "head file")->required();
  sub_eval->add_option("--report", report_path, "report json path")->required();

  std::string raw_path, pool_path, out_dir, judge_csv, rephrase_table;
  double train_fraction = 0.75;
  auto* sub_build = app.add_subcommand("build-dataset", "run the construction pipeline");
  sub_build->add_option("--raw", raw_path, "raw vqa jsonl")->required();
  sub_build->add_option("--locality-pool", pool_path, "locality pool jsonl")->required();
  sub_build->add_option("--out-dir", out_dir, "output directory")->required();
  sub_build->add_option("--judge-csv", judge_csv, "scripted judge csv");
  sub_build->add_option("--rephrase-table", rephrase_table, "mock rephraser table (jsonl)");
  sub_build->add_option("--train-fraction", train_fraction, "train share of the split");

  std::size_t seeds = 5, samples = 50;
  double eps = 1e-3, tolerance = 1e-4;
  auto* sub_grad = app.add_subcommand("gradcheck", "finite-difference gradient check");
  sub_grad->add_option("--seeds", seeds, "seeds per fusion mode");
  sub_grad->add_option("--samples", samples, "coordinates per run");
  sub_grad->add_option("--eps", eps, "central difference step");
  sub_grad->add_option("--tolerance", tolerance, "max relative error allowed");

  std::string ablate_train, ablate_test, ablate_csv;
  auto* sub_ablate = app.add_subcommand("ablate", "train and score all three fusion modes");
  sub_ablate->add_option("--train", ablate_train, "train pair jsonl")->required();
  sub_ablate->add_option("--test", ablate_test, "held-out pair jsonl")->required();
  sub_ablate->add_option("--out", ablate_csv, "comparison table csv");

  try {
    app.parse(argc, argv);

    // config file fills in whatever the command line left unset
    if (!config_path.empty()) {
      Settings file_settings;
      apply_config_file(config_path, file_settings);
      if (!seed_opt->count()) settings.seed = file_settings.seed;
      if (!provider_opt->count()) settings.provider = file_settings.provider;
      if (!client_opt->count()) settings.client = file_settings.client;
      if (!fusion_opt->count()) settings.fusion = file_settings.fusion;
      if (!d_opt->count()) settings.d = file_settings.d;
      if (!draw_opt->count()) settings.d_raw = file_settings.d_raw;
      if (!patch_opt->count()) settings.patch_count = file_settings.patch_count;
      if (!lr_opt->count()) settings.lr = file_settings.lr;
      if (!batch_opt->count()) settings.batch = file_settings.batch;
      if (!epochs_opt->count()) settings.epochs = file_settings.epochs;
      if (!threshold_opt->count()) settings.threshold = file_settings.threshold;
      if (!match_opt->count()) settings.match_mode = file_settings.match_mode;
      if (settings.embed_table.empty()) settings.embed_table = file_settings.embed_table;
      if (settings.embed_url.empty()) settings.embed_url = file_settings.embed_url;
      if (settings.base_table.empty()) settings.base_table = file_settings.base_table;
      if (settings.cf_table.empty()) settings.cf_table = file_settings.cf_table;
      if (settings.base_url.empty()) settings.base_url = file_settings.base_url;
      if (settings.cf_url.empty()) settings.cf_url = file_settings.cf_url;
      if (settings.judge_url.empty()) settings.judge_url = file_settings.judge_url;
      if (settings.bearer.empty()) settings.bearer = file_settings.bearer;
      if (settings.prompt_template == kDefaultPromptTemplate)
        settings.prompt_template = file_settings.prompt_template;
    }
    (void)fusion_mode_from_string(settings.fusion);

    if (sub_train->parsed()) return cmd_train(settings, data_path, out_path, trace_path);
    if (sub_edit->parsed()) return cmd_edit(settings, memory_dir, head_path, edit_path);
    if (sub_query->parsed()) return cmd_query(settings, memory_dir, head_path, prompt, image);
    if (sub_eval->parsed()) return cmd_eval(settings, dataset_path, head_path, report_path);
    if (sub_build->parsed())
      return cmd_build_dataset(settings, raw_path, pool_path, out_dir, judge_csv, rephrase_table,
                               train_fraction);
    if (sub_grad->parsed()) return cmd_gradcheck(settings, seeds, samples, eps, tolerance);
    if (sub_ablate->parsed()) return cmd_ablate(settings, ablate_train, ablate_test, ablate_csv);
    return 2;
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const TransportError& e) {
    std::cerr << "transport error: " << e.what() << "\n";
    return 3;
  } catch (const TrainingError& e) {
    std::cerr << "training error: " << e.what() << "\n";
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
