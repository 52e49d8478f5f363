// Shared test fixtures: temp directories, synthetic training corpora and the
// hand-walked golden evaluation fixture.
#ifndef MSCKE_TESTS_FIXTURES_HPP_
#define MSCKE_TESTS_FIXTURES_HPP_

#include <atomic>
#include <filesystem>
#include <string>
#include <unistd.h>
#include <vector>

#include "mscke/classifier.hpp"
#include "mscke/engine.hpp"
#include "mscke/evaluation.hpp"

namespace fixtures {

// Unique scratch directory, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<unsigned> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("mscke_" + tag + "_" + std::to_string(::getpid()) + "_" +
             std::to_string(counter.fetch_add(1)));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::filesystem::path path() const { return path_; }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

// ---- synthetic corpora ------------------------------------------------------

struct Corpus {
  std::vector<mscke::TrainPair> train;
  std::vector<mscke::TrainPair> held_out;
};

inline const std::vector<std::string>& query_pool() {
  static const std::vector<std::string> pool = {
      "what color is it",          "how many are there",
      "what is happening here",    "is it sunny outside",
      "what time of day is this",  "what sits in the front",
      "what stands at the back",   "describe the overall scene",
  };
  return pool;
}

// Two image clusters; the in-query shares the edit's image, the out-query
// takes an image from the other cluster, and every query prompt is drawn
// from one shared pool, so scope is decidable only through the image
// channel. Held-out pairs use unseen images.
inline Corpus make_visual_corpus(std::uint64_t seed, std::size_t train_per_cluster,
                                 std::size_t test_per_cluster) {
  static const std::vector<std::string> nouns = {"kite", "bird",  "boat", "lamp",
                                                 "tree", "bench", "dog",  "cart"};
  static const std::vector<std::string> adjs = {"red", "tall", "small", "old"};
  mscke::Rng rng(mscke::hash_mix(seed, 0xc0fe));
  Corpus corpus;
  auto build = [&](std::size_t count, std::size_t base_index, const char* suffix,
                   std::vector<mscke::TrainPair>& out) {
    for (std::size_t i = 0; i < count; ++i) {
      for (int cluster = 0; cluster < 2; ++cluster) {
        std::string own = (cluster == 0 ? "A" : "B") + std::string(suffix) +
                          std::to_string(base_index + i);
        std::string other = (cluster == 0 ? "B" : "A") + std::string(suffix) +
                            std::to_string(base_index + i);
        mscke::TrainPair pair;
        pair.edit.id = own + "-edit";
        pair.edit.image = own;
        pair.edit.prompt = "the " + adjs[rng.next_index(adjs.size())] + " " +
                           nouns[rng.next_index(nouns.size())] + " near the " +
                           nouns[rng.next_index(nouns.size())];
        pair.edit.target = nouns[rng.next_index(nouns.size())];
        pair.in_query.image = own;
        pair.in_query.prompt = query_pool()[rng.next_index(query_pool().size())];
        pair.out_query.image = other;
        pair.out_query.prompt = query_pool()[rng.next_index(query_pool().size())];
        out.push_back(std::move(pair));
      }
    }
  };
  build(train_per_cluster, 0, "t", corpus.train);
  build(test_per_cluster, 10000, "h", corpus.held_out);
  return corpus;
}

inline std::vector<mscke::TrainPair> strip_images(const std::vector<mscke::TrainPair>& pairs) {
  std::vector<mscke::TrainPair> out = pairs;
  for (mscke::TrainPair& p : out) {
    p.edit.image = std::nullopt;
    p.in_query.image = std::nullopt;
    p.out_query.image = std::nullopt;
  }
  return out;
}

// Disjoint vocabulary and disjoint images per cluster: both channels carry
// the scope signal. The easy fixture for trainer tests.
inline Corpus make_cluster_corpus(std::uint64_t seed, std::size_t train_per_cluster,
                                  std::size_t test_per_cluster) {
  static const std::vector<std::string> vocab_a = {"kite",  "string", "sky",  "wind",
                                                   "beach", "flying", "tail", "festival"};
  static const std::vector<std::string> vocab_b = {"engine", "piston", "gear",   "diesel",
                                                   "garage", "torque", "intake", "mechanic"};
  mscke::Rng rng(mscke::hash_mix(seed, 0xbee5));
  Corpus corpus;
  auto sentence = [&](const std::vector<std::string>& vocab) {
    std::string s = vocab[rng.next_index(vocab.size())];
    for (int w = 0; w < 3; ++w) s += " " + vocab[rng.next_index(vocab.size())];
    return s;
  };
  auto build = [&](std::size_t count, std::size_t base_index, const char* suffix,
                   std::vector<mscke::TrainPair>& out) {
    for (std::size_t i = 0; i < count; ++i) {
      for (int cluster = 0; cluster < 2; ++cluster) {
        const auto& own_vocab = cluster == 0 ? vocab_a : vocab_b;
        const auto& other_vocab = cluster == 0 ? vocab_b : vocab_a;
        std::string own_img = (cluster == 0 ? "ca" : "cb") + std::string(suffix) +
                              std::to_string(base_index + i);
        std::string other_img = (cluster == 0 ? "cb" : "ca") + std::string(suffix) +
                                std::to_string(base_index + i) + "x";
        mscke::TrainPair pair;
        pair.edit.id = own_img + "-edit";
        pair.edit.image = own_img;
        pair.edit.prompt = sentence(own_vocab);
        pair.edit.target = own_vocab[rng.next_index(own_vocab.size())];
        pair.in_query.image = own_img;
        pair.in_query.prompt = sentence(own_vocab);
        pair.out_query.image = other_img;
        pair.out_query.prompt = sentence(other_vocab);
        out.push_back(std::move(pair));
      }
    }
  };
  build(train_per_cluster, 0, "t", corpus.train);
  build(test_per_cluster, 10000, "h", corpus.held_out);
  return corpus;
}

// Fraction of held-out pairs classified correctly at threshold 0.5 (each
// pair contributes its in-query and its out-query).
inline double scope_accuracy(const mscke::AlignmentHead& head,
                             const mscke::EmbeddingProvider& provider,
                             const std::vector<mscke::TrainPair>& pairs) {
  std::size_t correct = 0;
  for (const mscke::TrainPair& pair : pairs) {
    if (mscke::classify(head, provider, pair.in_query, pair.edit) >= 0.5) ++correct;
    if (mscke::classify(head, provider, pair.out_query, pair.edit) < 0.5) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(2 * pairs.size());
}

// ---- golden evaluation fixture ----------------------------------------------
//
// Eight records evaluated with a hand-constructed head (identity text
// projection, zero image projection, tau = 10, b = -5) so that routing is a
// pure function of text overlap: probes sharing most tokens with the edit
// text route counterfactual, disjoint probes route base. The mock tables are
// scripted so the expected report is exactly:
//   reliability 1.0, locality 0.75 (records 0,1 route their locality probe
//   counterfactual and mismatch), generality 1.0, spec_in 1.0,
//   spec_out 0.5 (records 0..3 mismatch), specificity 0.75.
struct GoldenFixture {
  std::vector<mscke::DatasetRecord> records;
  mscke::AlignmentHead head;
  mscke::MockModelClient base{"base-a"};
  mscke::MockModelClient counterfactual{"cfr-a"};
  mscke::MockModelClient base_alt{"base-b"};
  mscke::MockModelClient counterfactual_alt{"cfr-b"};

  static constexpr double kReliability = 1.0;
  static constexpr double kLocality = 0.75;
  static constexpr double kGenerality = 1.0;
  static constexpr double kSpecIn = 1.0;
  static constexpr double kSpecOut = 0.5;
  static constexpr double kSpecificity = 0.75;
};

inline mscke::AlignmentHead make_golden_head() {
  mscke::AlignmentHead head;
  head.fusion = mscke::FusionMode::kDotAttention;
  head.d_raw = 64;
  head.d = 64;
  head.w_text = mscke::Mat(64, 64);
  for (std::size_t i = 0; i < 64; ++i) head.w_text.at(i, i) = 1.0;
  head.w_image = mscke::Mat(64, 64);  // zeros: image channel silenced
  head.tau = 10.0;
  head.bias = -5.0;
  return head;
}

inline GoldenFixture make_golden_fixture() {
  GoldenFixture fx;
  fx.head = make_golden_head();

  static const std::vector<std::string> subjects = {
      "striped kite", "wooden boat", "copper lamp", "garden bench",
      "paper crane",  "glass bottle", "brick tower", "velvet chair"};

  for (std::size_t i = 0; i < 8; ++i) {
    const std::string& subject = subjects[i];
    mscke::DatasetRecord r;
    r.image = "gold-img-" + std::to_string(i);
    r.edit_prompt = "what color is the " + subject;
    r.edit_target = "answer" + std::to_string(i);
    r.rephrase_prompt = "the " + subject + " is what color";
    // Records 0 and 1: locality prompt overlaps the edit text -> routes
    // counterfactual with a scripted answer that differs from the base
    // echo. Records 2..7: fully disjoint -> base-path purity match.
    if (i < 2) {
      r.locality_prompt = "what color is the " + subject + " here";
    } else {
      r.locality_prompt = "when did humans first bake sourdough bread v" + std::to_string(i);
    }
    r.locality_truth = "truth" + std::to_string(i);
    r.in_scope.push_back(mscke::ScopeEntryIn{"what color is the " + subject + " exactly",
                                             "inans" + std::to_string(i)});
    // Records 0..3: out probe overlaps the edit text -> routes
    // counterfactual and mismatches the base echo. Records 4..7: disjoint
    // -> base route, match.
    if (i < 4) {
      r.out_scope.push_back(mscke::ScopeEntryOut{"what color is near the " + subject});
    } else {
      r.out_scope.push_back(
          mscke::ScopeEntryOut{"how many bicycles lean on fences v" + std::to_string(i)});
    }
    r.hard_in = (i % 2) == 0;
    r.hard_out = (i % 3) == 0;
    fx.records.push_back(std::move(r));
  }

  // Script both counterfactual clients identically so transferability swaps
  // change nothing about the text either (the property itself only needs
  // (k*, rho, route) stability).
  auto script = [&](mscke::MockModelClient& cf) {
    for (std::size_t i = 0; i < 8; ++i) {
      const mscke::DatasetRecord& r = fx.records[i];
      mscke::EditExample edit{r.image, r.edit_prompt, r.edit_target, "r" + std::to_string(i)};
      auto composed = [&](const std::string& probe) {
        return mscke::compose_counterfactual_prompt(edit, mscke::QueryInput{r.image, probe});
      };
      cf.add_response(r.image, composed(r.edit_prompt), r.edit_target);
      cf.add_response(r.image, composed(r.rephrase_prompt), r.edit_target);
      cf.add_response(r.image, composed(r.in_scope[0].prompt), r.in_scope[0].target);
      if (i < 4)
        cf.add_response(r.image, composed(r.out_scope[0].prompt), "cf-out-" + std::to_string(i));
      if (i < 2) {
        mscke::QueryInput loc{std::nullopt, r.locality_prompt};
        cf.add_response(std::nullopt, mscke::compose_counterfactual_prompt(edit, loc),
                        "cf-loc-" + std::to_string(i));
      }
    }
  };
  script(fx.counterfactual);
  script(fx.counterfactual_alt);
  // Both base clients answer through the deterministic fallback echo.
  return fx;
}

}  // namespace fixtures

#endif  // MSCKE_TESTS_FIXTURES_HPP_
