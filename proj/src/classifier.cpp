#include "mscke/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "json.hpp"
#include "mscke/parallel.hpp"

namespace mscke {

using nlohmann::json;

namespace {

constexpr double kClampLo = 1e-7;
constexpr double kClampHi = 1.0 - 1e-7;
constexpr double kTauMin = 1e-6;
constexpr double kTauMax = 100.0;

double sigmoid(double s) {
  if (s >= 0.0) return 1.0 / (1.0 + std::exp(-s));
  double e = std::exp(s);
  return e / (1.0 + e);
}

double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

double norm_sq(const double* a, std::size_t n) { return dot(a, a, n); }

// v (len n) times m (n x d) -> out (len d)
void vec_mat(const double* v, const Mat& m, double* out) {
  for (std::size_t j = 0; j < m.cols; ++j) out[j] = 0.0;
  for (std::size_t k = 0; k < m.rows; ++k) {
    double vk = v[k];
    if (vk == 0.0) continue;
    const double* row = m.a.data() + k * m.cols;
    for (std::size_t j = 0; j < m.cols; ++j) out[j] += vk * row[j];
  }
}

// Max-subtracted softmax over s, written into a.
void softmax(const std::vector<double>& s, std::vector<double>& a) {
  a.resize(s.size());
  double mx = s[0];
  for (double x : s) mx = std::max(mx, x);
  double sum = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    a[i] = std::exp(s[i] - mx);
    sum += a[i];
  }
  for (double& x : a) x /= sum;
}

void check_finite_vec(const Vec& v, const char* what) {
  for (double x : v)
    if (!std::isfinite(x)) throw NumericError(std::string("non-finite value in ") + what);
}

// Everything the backward pass needs for one classify side.
struct SideTape {
  Vec raw_text;
  PatchSet raw_patches;
  Vec t;          // aligned text, length d
  PatchSet p;     // aligned patches, P x d
  Vec scores;     // attention logits, P (dot / cross)
  Vec attn;       // softmax weights, P
  Vec q;          // cross: projected query, d
  Vec keys;       // cross: P x d flattened
  Vec values;     // cross: P x d flattened
  Vec context;    // c, d (dot / cross)
  Vec mean;       // concat: mean patch, d
  Vec u;          // pre-normalization fusion output, d
  double u_norm = 0.0;
  Vec z;          // fused output, d
};

void align_into(const Mat& w, const Vec& raw, Vec& out) {
  out.resize(w.cols);
  vec_mat(raw.data(), w, out.data());
}

void align_rows_into(const Mat& w, const PatchSet& raw, PatchSet& out) {
  out.cols = w.cols;
  out.data.assign(raw.rows() * w.cols, 0.0);
  for (std::size_t r = 0; r < raw.rows(); ++r) vec_mat(raw.row(r), w, out.row(r));
}

// Fusion forward on aligned inputs. Fills the fusion fields of the tape.
void fuse_forward(const AlignmentHead& head, FusionMode mode, SideTape& tape) {
  const std::size_t d = head.d;
  const std::size_t patches = tape.p.rows();
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

  tape.u.assign(d, 0.0);
  switch (mode) {
    case FusionMode::kDotAttention: {
      if (patches == 0) {
        tape.u = tape.t;
        break;
      }
      tape.scores.resize(patches);
      for (std::size_t r = 0; r < patches; ++r)
        tape.scores[r] = dot(tape.p.row(r), tape.t.data(), d) * inv_sqrt_d;
      softmax(tape.scores, tape.attn);
      tape.context.assign(d, 0.0);
      for (std::size_t r = 0; r < patches; ++r) {
        const double* row = tape.p.row(r);
        for (std::size_t j = 0; j < d; ++j) tape.context[j] += tape.attn[r] * row[j];
      }
      for (std::size_t j = 0; j < d; ++j) tape.u[j] = tape.t[j] + tape.context[j];
      break;
    }
    case FusionMode::kConcat: {
      tape.mean.assign(d, 0.0);
      if (patches > 0) {
        for (std::size_t r = 0; r < patches; ++r) {
          const double* row = tape.p.row(r);
          for (std::size_t j = 0; j < d; ++j) tape.mean[j] += row[j];
        }
        for (double& x : tape.mean) x /= static_cast<double>(patches);
      }
      Vec joint(2 * d);
      std::copy(tape.t.begin(), tape.t.end(), joint.begin());
      std::copy(tape.mean.begin(), tape.mean.end(), joint.begin() + static_cast<std::ptrdiff_t>(d));
      // u = W_c^T [t ; m]
      for (std::size_t k = 0; k < 2 * d; ++k) {
        double xk = joint[k];
        if (xk == 0.0) continue;
        const double* row = head.w_concat.a.data() + k * d;
        for (std::size_t j = 0; j < d; ++j) tape.u[j] += xk * row[j];
      }
      break;
    }
    case FusionMode::kCrossAttention: {
      if (patches == 0) {
        tape.u = tape.t;
        break;
      }
      tape.q.assign(d, 0.0);
      for (std::size_t k = 0; k < d; ++k) {
        double tk = tape.t[k];
        if (tk == 0.0) continue;
        const double* row = head.w_query.a.data() + k * d;
        for (std::size_t j = 0; j < d; ++j) tape.q[j] += tk * row[j];
      }
      tape.keys.assign(patches * d, 0.0);
      tape.values.assign(patches * d, 0.0);
      for (std::size_t r = 0; r < patches; ++r) {
        vec_mat(tape.p.row(r), head.w_key, tape.keys.data() + r * d);
        vec_mat(tape.p.row(r), head.w_value, tape.values.data() + r * d);
      }
      tape.scores.resize(patches);
      for (std::size_t r = 0; r < patches; ++r)
        tape.scores[r] = dot(tape.keys.data() + r * d, tape.q.data(), d) * inv_sqrt_d;
      softmax(tape.scores, tape.attn);
      tape.context.assign(d, 0.0);
      for (std::size_t r = 0; r < patches; ++r) {
        const double* row = tape.values.data() + r * d;
        for (std::size_t j = 0; j < d; ++j) tape.context[j] += tape.attn[r] * row[j];
      }
      // u = t + W_o^T c
      tape.u = tape.t;
      for (std::size_t k = 0; k < d; ++k) {
        double ck = tape.context[k];
        if (ck == 0.0) continue;
        const double* row = head.w_out.a.data() + k * d;
        for (std::size_t j = 0; j < d; ++j) tape.u[j] += ck * row[j];
      }
      break;
    }
  }

  tape.u_norm = std::sqrt(norm_sq(tape.u.data(), d));
  tape.z = tape.u;
  if (tape.u_norm > 0.0) {
    for (double& x : tape.z) x /= tape.u_norm;
  }
  check_finite_vec(tape.z, "fused vector");
}

void forward_side(const AlignmentHead& head, const EmbeddingProvider& provider,
                  const ImageRef& image, const std::string& text, SideTape& tape) {
  tape.raw_text = encode_text(provider, text);
  tape.raw_patches = encode_image(provider, image);
  if (tape.raw_text.size() != head.d_raw)
    throw ContractError("provider d_raw does not match head d_raw");
  align_into(head.w_text, tape.raw_text, tape.t);
  align_rows_into(head.w_image, tape.raw_patches, tape.p);
  fuse_forward(head, head.fusion, tape);
}

struct CosTape {
  double cos = 0.0;
  double norm_a = 0.0;
  double norm_b = 0.0;
  bool degenerate = false;  // a zero vector on either side; cos defined as 0
};

CosTape cosine(const Vec& a, const Vec& b) {
  CosTape c;
  double na2 = norm_sq(a.data(), a.size());
  double nb2 = norm_sq(b.data(), b.size());
  if (na2 == 0.0 || nb2 == 0.0) {
    c.degenerate = true;
    return c;
  }
  c.norm_a = std::sqrt(na2);
  c.norm_b = std::sqrt(nb2);
  c.cos = dot(a.data(), b.data(), a.size()) / (c.norm_a * c.norm_b);
  return c;
}

// d(cos)/d(a) and d(cos)/d(b), scaled by upstream dcos, accumulated into
// da/db.
void cosine_backward(const CosTape& ct, const Vec& a, const Vec& b, double dcos, Vec& da, Vec& db) {
  if (ct.degenerate || dcos == 0.0) return;
  double inv_ab = 1.0 / (ct.norm_a * ct.norm_b);
  double inv_aa = ct.cos / (ct.norm_a * ct.norm_a);
  double inv_bb = ct.cos / (ct.norm_b * ct.norm_b);
  for (std::size_t i = 0; i < a.size(); ++i) {
    da[i] += dcos * (b[i] * inv_ab - a[i] * inv_aa);
    db[i] += dcos * (a[i] * inv_ab - b[i] * inv_bb);
  }
}

// z = u / |u|; gradient of L wrt u given dz.
void normalize_backward(const SideTape& tape, const Vec& dz, Vec& du) {
  const std::size_t d = dz.size();
  du.assign(d, 0.0);
  if (tape.u_norm == 0.0) {
    du = dz;  // z == u in the degenerate case
    return;
  }
  double g_dot_z = dot(dz.data(), tape.z.data(), d);
  double inv = 1.0 / tape.u_norm;
  for (std::size_t j = 0; j < d; ++j) du[j] = (dz[j] - g_dot_z * tape.z[j]) * inv;
}

void softmax_backward(const std::vector<double>& attn, const Vec& dattn, Vec& dscores) {
  const std::size_t n = attn.size();
  dscores.assign(n, 0.0);
  double dot_ad = 0.0;
  for (std::size_t i = 0; i < n; ++i) dot_ad += attn[i] * dattn[i];
  for (std::size_t i = 0; i < n; ++i) dscores[i] = attn[i] * (dattn[i] - dot_ad);
}

// Backward through fusion + alignment for one side; dz is dL/dz.
void side_backward(const AlignmentHead& head, const SideTape& tape, const Vec& dz, HeadGrad& g) {
  const std::size_t d = head.d;
  const std::size_t patches = tape.p.rows();
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

  Vec du;
  normalize_backward(tape, dz, du);

  Vec dt(d, 0.0);
  std::vector<double> dp(patches * d, 0.0);

  switch (head.fusion) {
    case FusionMode::kDotAttention: {
      if (patches == 0) {
        dt = du;
        break;
      }
      dt = du;  // direct path u = t + c
      // c = sum_r attn_r * p_r
      Vec dattn(patches, 0.0);
      for (std::size_t r = 0; r < patches; ++r) {
        const double* prow = tape.p.row(r);
        double* dprow = dp.data() + r * d;
        double acc = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          acc += du[j] * prow[j];
          dprow[j] += tape.attn[r] * du[j];
        }
        dattn[r] = acc;
      }
      Vec dscores;
      softmax_backward(tape.attn, dattn, dscores);
      // scores_r = p_r . t / sqrt(d)
      for (std::size_t r = 0; r < patches; ++r) {
        double s = dscores[r] * inv_sqrt_d;
        if (s == 0.0) continue;
        const double* prow = tape.p.row(r);
        double* dprow = dp.data() + r * d;
        for (std::size_t j = 0; j < d; ++j) {
          dt[j] += s * prow[j];
          dprow[j] += s * tape.t[j];
        }
      }
      break;
    }
    case FusionMode::kConcat: {
      // u_j = sum_k joint_k W_c[k][j]
      Vec djoint(2 * d, 0.0);
      for (std::size_t k = 0; k < 2 * d; ++k) {
        double joint_k = (k < d) ? tape.t[k] : tape.mean[k - d];
        const double* row = head.w_concat.a.data() + k * d;
        double* grow = g.w_concat.a.data() + k * d;
        double acc = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          acc += row[j] * du[j];
          grow[j] += joint_k * du[j];
        }
        djoint[k] = acc;
      }
      for (std::size_t j = 0; j < d; ++j) dt[j] = djoint[j];
      if (patches > 0) {
        double inv_p = 1.0 / static_cast<double>(patches);
        for (std::size_t r = 0; r < patches; ++r) {
          double* dprow = dp.data() + r * d;
          for (std::size_t j = 0; j < d; ++j) dprow[j] += djoint[d + j] * inv_p;
        }
      }
      break;
    }
    case FusionMode::kCrossAttention: {
      if (patches == 0) {
        dt = du;
        break;
      }
      dt = du;  // direct path u = t + W_o^T c
      // o_j = sum_k c_k W_o[k][j]
      Vec dcontext(d, 0.0);
      for (std::size_t k = 0; k < d; ++k) {
        const double* row = head.w_out.a.data() + k * d;
        double* grow = g.w_out.a.data() + k * d;
        double acc = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          acc += row[j] * du[j];
          grow[j] += tape.context[k] * du[j];
        }
        dcontext[k] = acc;
      }
      // c = sum_r attn_r V_r
      Vec dattn(patches, 0.0);
      std::vector<double> dvalues(patches * d, 0.0);
      for (std::size_t r = 0; r < patches; ++r) {
        const double* vrow = tape.values.data() + r * d;
        double* dvrow = dvalues.data() + r * d;
        double acc = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          acc += dcontext[j] * vrow[j];
          dvrow[j] = tape.attn[r] * dcontext[j];
        }
        dattn[r] = acc;
      }
      Vec dscores;
      softmax_backward(tape.attn, dattn, dscores);
      // scores_r = K_r . q / sqrt(d)
      Vec dq(d, 0.0);
      std::vector<double> dkeys(patches * d, 0.0);
      for (std::size_t r = 0; r < patches; ++r) {
        double s = dscores[r] * inv_sqrt_d;
        const double* krow = tape.keys.data() + r * d;
        double* dkrow = dkeys.data() + r * d;
        for (std::size_t j = 0; j < d; ++j) {
          dq[j] += s * krow[j];
          dkrow[j] = s * tape.q[j];
        }
      }
      // K_r = p_r W_k, V_r = p_r W_v
      for (std::size_t r = 0; r < patches; ++r) {
        const double* prow = tape.p.row(r);
        const double* dkrow = dkeys.data() + r * d;
        const double* dvrow = dvalues.data() + r * d;
        double* dprow = dp.data() + r * d;
        for (std::size_t k = 0; k < d; ++k) {
          const double* wk_row = head.w_key.a.data() + k * d;
          const double* wv_row = head.w_value.a.data() + k * d;
          double* gk_row = g.w_key.a.data() + k * d;
          double* gv_row = g.w_value.a.data() + k * d;
          double acc = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            gk_row[j] += prow[k] * dkrow[j];
            gv_row[j] += prow[k] * dvrow[j];
            acc += wk_row[j] * dkrow[j] + wv_row[j] * dvrow[j];
          }
          dprow[k] += acc;
        }
      }
      // q_j = sum_k t_k W_q[k][j]
      for (std::size_t k = 0; k < d; ++k) {
        const double* row = head.w_query.a.data() + k * d;
        double* grow = g.w_query.a.data() + k * d;
        double acc = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          acc += row[j] * dq[j];
          grow[j] += tape.t[k] * dq[j];
        }
        dt[k] += acc;
      }
      break;
    }
  }

  // Alignment backward: t = raw_text . W_t, p_r = raw_patch_r . W_i.
  for (std::size_t k = 0; k < head.d_raw; ++k) {
    double rk = tape.raw_text[k];
    if (rk == 0.0) continue;
    double* grow = g.w_text.a.data() + k * d;
    for (std::size_t j = 0; j < d; ++j) grow[j] += rk * dt[j];
  }
  for (std::size_t r = 0; r < patches; ++r) {
    const double* raw_row = tape.raw_patches.row(r);
    const double* dprow = dp.data() + r * d;
    for (std::size_t k = 0; k < head.d_raw; ++k) {
      double rk = raw_row[k];
      if (rk == 0.0) continue;
      double* grow = g.w_image.a.data() + k * d;
      for (std::size_t j = 0; j < d; ++j) grow[j] += rk * dprow[j];
    }
  }
}

struct PairEval {
  double loss = 0.0;
};

// Full unrounded forward + backward for one train pair; gradient of the
// pair's mean-scaled loss contribution is accumulated into g.
double pair_loss_and_grad(const AlignmentHead& head, const EmbeddingProvider& provider,
                          const TrainPair& pair, double scale, HeadGrad* g) {
  SideTape edit_tape, in_tape, out_tape;
  forward_side(head, provider, pair.edit.image, edit_side_text(pair.edit), edit_tape);
  forward_side(head, provider, pair.in_query.image, pair.in_query.prompt, in_tape);
  forward_side(head, provider, pair.out_query.image, pair.out_query.prompt, out_tape);

  CosTape cos_in = cosine(edit_tape.z, in_tape.z);
  CosTape cos_out = cosine(edit_tape.z, out_tape.z);
  double s_in = head.tau * cos_in.cos + head.bias;
  double s_out = head.tau * cos_out.cos + head.bias;
  double rho_in = sigmoid(s_in);
  double rho_out = sigmoid(s_out);
  double loss = bce_from_probs(rho_in, rho_out);

  if (g) {
    // d(loss)/d(rho); zero when the clamp is active.
    double d_rho_in = (rho_in > kClampLo && rho_in < kClampHi) ? -scale / rho_in : 0.0;
    double d_rho_out = (rho_out > kClampLo && rho_out < kClampHi) ? scale / (1.0 - rho_out) : 0.0;
    double d_s_in = d_rho_in * rho_in * (1.0 - rho_in);
    double d_s_out = d_rho_out * rho_out * (1.0 - rho_out);
    g->tau += d_s_in * cos_in.cos + d_s_out * cos_out.cos;
    g->bias += d_s_in + d_s_out;

    const std::size_t d = head.d;
    Vec dz_edit(d, 0.0), dz_in(d, 0.0), dz_out(d, 0.0);
    cosine_backward(cos_in, edit_tape.z, in_tape.z, d_s_in * head.tau, dz_edit, dz_in);
    cosine_backward(cos_out, edit_tape.z, out_tape.z, d_s_out * head.tau, dz_edit, dz_out);
    side_backward(head, edit_tape, dz_edit, *g);
    side_backward(head, in_tape, dz_in, *g);
    side_backward(head, out_tape, dz_out, *g);
  }
  return loss;
}

struct BatchEval {
  double loss = 0.0;
  HeadGrad grad;
};

BatchEval eval_batch(const AlignmentHead& head, const EmbeddingProvider& provider,
                     const std::vector<TrainPair>& batch, bool want_grad, bool parallel) {
  if (batch.empty()) throw ValidationError("batch must be non-empty");
  const std::size_t n = batch.size();
  const double scale = 1.0 / static_cast<double>(n);

  std::vector<double> losses(n, 0.0);
  std::vector<HeadGrad> grads;
  if (want_grad) grads.assign(n, zero_grad_like(head));

  parallel_for(n, parallel, [&](std::size_t i) {
    losses[i] = pair_loss_and_grad(head, provider, batch[i], scale,
                                   want_grad ? &grads[i] : nullptr);
  });

  BatchEval out;
  out.grad = zero_grad_like(head);
  for (std::size_t i = 0; i < n; ++i) out.loss += losses[i];
  out.loss *= scale;
  if (want_grad) {
    std::vector<double*> acc = param_ptrs(out.grad, head.fusion);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double*> src = param_ptrs(grads[i], head.fusion);
      for (std::size_t k = 0; k < acc.size(); ++k) *acc[k] += *src[k];
    }
  }
  return out;
}

void collect_mat(std::vector<double*>& out, Mat& m) {
  for (double& x : m.a) out.push_back(&x);
}

}  // namespace

FusionMode fusion_mode_from_string(const std::string& name) {
  if (name == "concat") return FusionMode::kConcat;
  if (name == "cross_attention") return FusionMode::kCrossAttention;
  if (name == "dot_attention") return FusionMode::kDotAttention;
  throw ConfigError("unknown fusion mode: " + name);
}

std::string fusion_mode_name(FusionMode mode) {
  switch (mode) {
    case FusionMode::kConcat: return "concat";
    case FusionMode::kCrossAttention: return "cross_attention";
    case FusionMode::kDotAttention: return "dot_attention";
  }
  throw ConfigError("invalid fusion mode value");
}

HeadGrad zero_grad_like(const AlignmentHead& head) {
  HeadGrad g;
  g.w_text = Mat(head.d_raw, head.d);
  g.w_image = Mat(head.d_raw, head.d);
  switch (head.fusion) {
    case FusionMode::kConcat:
      g.w_concat = Mat(2 * head.d, head.d);
      break;
    case FusionMode::kCrossAttention:
      g.w_query = Mat(head.d, head.d);
      g.w_key = Mat(head.d, head.d);
      g.w_value = Mat(head.d, head.d);
      g.w_out = Mat(head.d, head.d);
      break;
    case FusionMode::kDotAttention:
      break;
  }
  return g;
}

AlignmentHead make_head(FusionMode mode, std::size_t d_raw, std::size_t d, std::uint64_t seed) {
  if (d_raw == 0 || d == 0) throw ConfigError("head dimensions must be positive");
  AlignmentHead head;
  head.fusion = mode;
  head.d_raw = d_raw;
  head.d = d;
  head.w_text = Mat(d_raw, d);
  head.w_image = Mat(d_raw, d);

  Rng rng(hash_mix(seed, 0x696e6974ULL));
  auto fill_identity_like = [&](Mat& m) {
    for (std::size_t k = 0; k < m.rows; ++k)
      for (std::size_t j = 0; j < m.cols; ++j)
        m.at(k, j) = (k == j ? 1.0 : 0.0) + rng.next_uniform(-0.01, 0.01);
  };
  fill_identity_like(head.w_text);
  fill_identity_like(head.w_image);

  double bound = 1.0 / std::sqrt(static_cast<double>(d));
  auto fill_uniform = [&](Mat& m) {
    for (double& x : m.a) x = rng.next_uniform(-bound, bound);
  };
  switch (mode) {
    case FusionMode::kConcat:
      head.w_concat = Mat(2 * d, d);
      fill_uniform(head.w_concat);
      break;
    case FusionMode::kCrossAttention:
      head.w_query = Mat(d, d);
      head.w_key = Mat(d, d);
      head.w_value = Mat(d, d);
      head.w_out = Mat(d, d);
      fill_uniform(head.w_query);
      fill_uniform(head.w_key);
      fill_uniform(head.w_value);
      fill_uniform(head.w_out);
      break;
    case FusionMode::kDotAttention:
      break;
  }
  head.tau = 10.0;
  head.bias = 0.0;
  for (double* p : param_ptrs(head)) *p = q32(*p);
  return head;
}

Vec align_text(const AlignmentHead& head, const Vec& raw) {
  if (raw.size() != head.d_raw)
    throw ContractError("align_text: raw vector length does not match d_raw");
  Vec out;
  align_into(head.w_text, raw, out);
  check_finite_vec(out, "aligned text");
  q32_all(out);
  return out;
}

PatchSet align_image(const AlignmentHead& head, const PatchSet& raw) {
  if (raw.rows() != 0 && raw.cols != head.d_raw)
    throw ContractError("align_image: patch width does not match d_raw");
  PatchSet out;
  align_rows_into(head.w_image, raw, out);
  for (double x : out.data)
    if (!std::isfinite(x)) throw NumericError("non-finite value in aligned patches");
  q32_all(out.data);
  return out;
}

Vec fuse(const AlignmentHead& head, const Vec& text, const PatchSet& patches, FusionMode mode) {
  if (text.size() != head.d) throw ContractError("fuse: text vector length does not match d");
  if (patches.rows() != 0 && patches.cols != head.d)
    throw ContractError("fuse: patch width does not match d");
  SideTape tape;
  tape.t = text;
  tape.p = patches;
  fuse_forward(head, mode, tape);
  q32_all(tape.z);
  return tape.z;
}

Vec fuse(const AlignmentHead& head, const Vec& text, const PatchSet& patches) {
  return fuse(head, text, patches, head.fusion);
}

double score(const AlignmentHead& head, const Vec& z_edit, const Vec& z_query) {
  if (z_edit.size() != head.d || z_query.size() != head.d)
    throw ContractError("score: fused vector length does not match d");
  CosTape ct = cosine(z_edit, z_query);
  double rho = sigmoid(head.tau * ct.cos + head.bias);
  // Keep rho strictly inside (0,1); the raw sigmoid saturates to 0/1 in
  // double precision once |tau*cos + b| exceeds ~37.
  return std::min(std::max(rho, kClampLo), kClampHi);
}

std::string edit_side_text(const EditExample& edit) { return edit.prompt + " " + edit.target; }

Vec embed_edit_side(const AlignmentHead& head, const EmbeddingProvider& provider,
                    const EditExample& edit) {
  Vec t = align_text(head, encode_text(provider, edit_side_text(edit)));
  PatchSet p = align_image(head, encode_image(provider, edit.image));
  return fuse(head, t, p);
}

Vec embed_query_side(const AlignmentHead& head, const EmbeddingProvider& provider,
                     const QueryInput& query) {
  if (query.prompt.empty()) throw ValidationError("query prompt must be non-empty");
  Vec t = align_text(head, encode_text(provider, query.prompt));
  PatchSet p = align_image(head, encode_image(provider, query.image));
  return fuse(head, t, p);
}

double classify(const AlignmentHead& head, const EmbeddingProvider& provider,
                const QueryInput& query, const EditExample& edit) {
  return score(head, embed_edit_side(head, provider, edit), embed_query_side(head, provider, query));
}

double bce_from_probs(double rho_in, double rho_out) {
  double pi = std::min(std::max(rho_in, kClampLo), kClampHi);
  double po = std::min(std::max(rho_out, kClampLo), kClampHi);
  return -(std::log(pi) + std::log(1.0 - po));
}

double bce_loss(const AlignmentHead& head, const EmbeddingProvider& provider,
                const std::vector<TrainPair>& batch) {
  return eval_batch(head, provider, batch, false, true).loss;
}

double bce_loss_serial(const AlignmentHead& head, const EmbeddingProvider& provider,
                       const std::vector<TrainPair>& batch) {
  return eval_batch(head, provider, batch, false, false).loss;
}

HeadGrad grad(const AlignmentHead& head, const EmbeddingProvider& provider,
              const std::vector<TrainPair>& batch) {
  return eval_batch(head, provider, batch, true, true).grad;
}

HeadGrad grad_serial(const AlignmentHead& head, const EmbeddingProvider& provider,
                     const std::vector<TrainPair>& batch) {
  return eval_batch(head, provider, batch, true, false).grad;
}

TrainResult train(const std::vector<TrainPair>& dataset, const EmbeddingProvider& provider,
                  const TrainConfig& config) {
  if (dataset.empty()) throw ValidationError("training dataset must be non-empty");
  if (config.learning_rate < 0.0) throw ConfigError("learning_rate must be non-negative");
  if (config.batch_size == 0) throw ConfigError("batch_size must be positive");
  if (config.epochs == 0) throw ConfigError("epochs must be positive");

  TrainResult result;
  result.head = make_head(config.fusion_mode, provider.d_raw(), config.d, config.seed);
  AlignmentHead& head = result.head;

  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle_rng(hash_mix(config.seed, 0x73687566666c65ULL));

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double epoch_loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      std::size_t end = std::min(order.size(), start + config.batch_size);
      std::vector<TrainPair> batch;
      batch.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) batch.push_back(dataset[order[i]]);

      BatchEval eval;
      try {
        eval = eval_batch(head, provider, batch, true, true);
      } catch (const NumericError& e) {
        throw TrainingError("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(start / config.batch_size) + ": " + e.what());
      }
      if (!std::isfinite(eval.loss))
        throw TrainingError("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(start / config.batch_size));
      epoch_loss_sum += eval.loss * static_cast<double>(batch.size());

      std::vector<double*> params = param_ptrs(head);
      std::vector<double*> grads = param_ptrs(eval.grad, head.fusion);
      for (std::size_t k = 0; k < params.size(); ++k)
        *params[k] -= config.learning_rate * *grads[k];
      head.tau = std::min(std::max(head.tau, kTauMin), kTauMax);
    }
    result.epoch_losses.push_back(epoch_loss_sum / static_cast<double>(dataset.size()));
  }

  for (double* p : param_ptrs(head)) *p = q32(*p);
  return result;
}

std::vector<double*> param_ptrs(AlignmentHead& head) {
  std::vector<double*> out;
  collect_mat(out, head.w_text);
  collect_mat(out, head.w_image);
  switch (head.fusion) {
    case FusionMode::kConcat:
      collect_mat(out, head.w_concat);
      break;
    case FusionMode::kCrossAttention:
      collect_mat(out, head.w_query);
      collect_mat(out, head.w_key);
      collect_mat(out, head.w_value);
      collect_mat(out, head.w_out);
      break;
    case FusionMode::kDotAttention:
      break;
  }
  out.push_back(&head.tau);
  out.push_back(&head.bias);
  return out;
}

std::vector<const double*> param_ptrs(const AlignmentHead& head) {
  std::vector<double*> mut = param_ptrs(const_cast<AlignmentHead&>(head));
  return std::vector<const double*>(mut.begin(), mut.end());
}

std::vector<double*> param_ptrs(HeadGrad& grad_struct, FusionMode mode) {
  std::vector<double*> out;
  collect_mat(out, grad_struct.w_text);
  collect_mat(out, grad_struct.w_image);
  switch (mode) {
    case FusionMode::kConcat:
      collect_mat(out, grad_struct.w_concat);
      break;
    case FusionMode::kCrossAttention:
      collect_mat(out, grad_struct.w_query);
      collect_mat(out, grad_struct.w_key);
      collect_mat(out, grad_struct.w_value);
      collect_mat(out, grad_struct.w_out);
      break;
    case FusionMode::kDotAttention:
      break;
  }
  out.push_back(&grad_struct.tau);
  out.push_back(&grad_struct.bias);
  return out;
}

namespace {

void le_append_u32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

std::string head_bytes(const AlignmentHead& head) {
  std::string out;
  out += "MSCH";
  le_append_u32(out, 1);
  out.push_back(static_cast<char>(static_cast<std::uint8_t>(head.fusion)));
  le_append_u32(out, static_cast<std::uint32_t>(head.d_raw));
  le_append_u32(out, static_cast<std::uint32_t>(head.d));
  for (const double* p : param_ptrs(head)) {
    float f = static_cast<float>(*p);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    le_append_u32(out, bits);
  }
  return out;
}

}  // namespace

void save_head(const AlignmentHead& head, const std::string& path) {
  write_text_file(path, head_bytes(head));
}

AlignmentHead load_head(const std::string& path) {
  std::string data = read_text_file(path);
  std::size_t pos = 0;
  auto need = [&](std::size_t n) {
    if (pos + n > data.size()) throw FormatError("truncated head file: " + path);
  };
  auto read_u32 = [&]() {
    need(4);
    std::uint32_t v = static_cast<std::uint8_t>(data[pos]) |
                      (static_cast<std::uint32_t>(static_cast<std::uint8_t>(data[pos + 1])) << 8) |
                      (static_cast<std::uint32_t>(static_cast<std::uint8_t>(data[pos + 2])) << 16) |
                      (static_cast<std::uint32_t>(static_cast<std::uint8_t>(data[pos + 3])) << 24);
    pos += 4;
    return v;
  };

  need(4);
  if (data.substr(0, 4) != "MSCH") throw FormatError("bad head magic: " + path);
  pos = 4;
  std::uint32_t version = read_u32();
  if (version != 1) throw FormatError("unsupported head version: " + std::to_string(version));
  need(1);
  std::uint8_t mode_byte = static_cast<std::uint8_t>(data[pos++]);
  if (mode_byte > 2) throw FormatError("invalid fusion mode byte: " + std::to_string(mode_byte));
  std::uint32_t d_raw = read_u32();
  std::uint32_t d = read_u32();
  if (d_raw == 0 || d == 0) throw FormatError("head dimensions must be positive: " + path);

  AlignmentHead head;
  head.fusion = static_cast<FusionMode>(mode_byte);
  head.d_raw = d_raw;
  head.d = d;
  head.w_text = Mat(d_raw, d);
  head.w_image = Mat(d_raw, d);
  switch (head.fusion) {
    case FusionMode::kConcat:
      head.w_concat = Mat(2 * static_cast<std::size_t>(d), d);
      break;
    case FusionMode::kCrossAttention:
      head.w_query = Mat(d, d);
      head.w_key = Mat(d, d);
      head.w_value = Mat(d, d);
      head.w_out = Mat(d, d);
      break;
    case FusionMode::kDotAttention:
      break;
  }
  for (double* p : param_ptrs(head)) {
    std::uint32_t bits = read_u32();
    float f;
    std::memcpy(&f, &bits, 4);
    *p = static_cast<double>(f);
  }
  if (pos != data.size()) throw FormatError("trailing bytes in head file: " + path);
  if (!(head.tau > 0.0 && head.tau <= kTauMax))
    throw FormatError("head tau outside (0, 100]: " + path);
  return head;
}

std::uint64_t head_fingerprint(const AlignmentHead& head) {
  return fnv1a64(head_bytes(head));
}

TrainPair parse_train_pair(const std::string& line, std::size_t line_number) {
  json j = json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object())
    throw ParseError("malformed train pair" +
                     (line_number ? " (line " + std::to_string(line_number) + ")" : ""));
  auto get_obj = [&](const char* name) -> const json& {
    auto it = j.find(name);
    if (it == j.end() || !it->is_object())
      throw ValidationError(std::string("missing object field: ") + name);
    return *it;
  };
  const json& e = get_obj("edit");
  TrainPair pair;
  pair.edit = parse_edit_example(e.dump(), line_number);
  auto read_query = [&](const char* name) {
    const json& q = get_obj(name);
    QueryInput query;
    auto img = q.find("image");
    if (img == q.end()) throw ValidationError(std::string(name) + ".image missing");
    if (!img->is_null()) {
      if (!img->is_string()) throw ValidationError(std::string(name) + ".image must be string or null");
      query.image = img->get<std::string>();
      validate_image_ref(query.image, std::string(name) + ".image");
    }
    auto prompt = q.find("prompt");
    if (prompt == q.end() || !prompt->is_string() || prompt->get<std::string>().empty())
      throw ValidationError(std::string(name) + ".prompt must be a non-empty string");
    query.prompt = prompt->get<std::string>();
    return query;
  };
  pair.in_query = read_query("in_query");
  pair.out_query = read_query("out_query");
  return pair;
}

std::string serialize_train_pair(const TrainPair& pair) {
  json j;
  j["edit"] = json::parse(serialize_edit_example(pair.edit));
  j["in_query"] = json{{"image", pair.in_query.image ? json(*pair.in_query.image) : json(nullptr)},
                       {"prompt", pair.in_query.prompt}};
  j["out_query"] = json{{"image", pair.out_query.image ? json(*pair.out_query.image) : json(nullptr)},
                        {"prompt", pair.out_query.prompt}};
  return j.dump();
}

double scope_accuracy(const AlignmentHead& head, const EmbeddingProvider& provider,
                      const std::vector<TrainPair>& pairs) {
  if (pairs.empty()) throw ValidationError("accuracy needs at least one pair");
  std::vector<unsigned char> hits(pairs.size(), 0);
  parallel_for(pairs.size(), true, [&](std::size_t i) {
    Vec z_edit = embed_edit_side(head, provider, pairs[i].edit);
    unsigned char h = 0;
    if (score(head, z_edit, embed_query_side(head, provider, pairs[i].in_query)) >= 0.5) ++h;
    if (score(head, z_edit, embed_query_side(head, provider, pairs[i].out_query)) < 0.5) ++h;
    hits[i] = h;
  });
  std::size_t correct = 0;
  for (unsigned char h : hits) correct += h;
  return static_cast<double>(correct) / static_cast<double>(2 * pairs.size());
}

GradCheckReport grad_check(const AlignmentHead& head, const EmbeddingProvider& provider,
                           const std::vector<TrainPair>& batch, std::size_t samples,
                           std::uint64_t seed, double eps) {
  AlignmentHead probe = head;
  HeadGrad analytic = grad_serial(probe, provider, batch);
  std::vector<double*> params = param_ptrs(probe);
  std::vector<double*> grads = param_ptrs(analytic, probe.fusion);

  std::vector<std::size_t> picks;
  Rng rng(hash_mix(seed, 0x67636865636bULL));
  std::size_t n_random = samples > 2 ? samples - 2 : 0;
  for (std::size_t i = 0; i < n_random; ++i) picks.push_back(rng.next_index(params.size() - 2));
  picks.push_back(params.size() - 2);  // tau
  picks.push_back(params.size() - 1);  // bias

  GradCheckReport report;
  for (std::size_t idx : picks) {
    double saved = *params[idx];
    double hi = saved + eps;
    double lo = saved - eps;
    *params[idx] = hi;
    double loss_hi = bce_loss_serial(probe, provider, batch);
    *params[idx] = lo;
    double loss_lo = bce_loss_serial(probe, provider, batch);
    *params[idx] = saved;
    double numeric = (loss_hi - loss_lo) / (hi - lo);
    double ana = *grads[idx];
    double denom = std::max({1.0, std::fabs(numeric), std::fabs(ana)});
    report.max_rel_err = std::max(report.max_rel_err, std::fabs(numeric - ana) / denom);
    ++report.coordinates;
  }
  return report;
}

std::vector<AblationRow> run_fusion_ablation(const std::vector<TrainPair>& train_pairs,
                                             const std::vector<TrainPair>& held_out,
                                             const EmbeddingProvider& provider,
                                             TrainConfig config) {
  std::vector<AblationRow> rows;
  for (FusionMode mode :
       {FusionMode::kConcat, FusionMode::kCrossAttention, FusionMode::kDotAttention}) {
    config.fusion_mode = mode;
    TrainResult result = train(train_pairs, provider, config);
    AblationRow row;
    row.mode = mode;
    row.held_out_accuracy = scope_accuracy(result.head, provider, held_out);
    row.final_loss = result.epoch_losses.back();
    rows.push_back(row);
  }
  return rows;
}

std::vector<TrainPair> read_train_pairs(const std::string& path) {
  std::string text = read_text_file(path);
  std::vector<TrainPair> pairs;
  std::size_t line_number = 0;
  for (const std::string& line : split_lines(text)) {
    ++line_number;
    if (line.empty()) continue;
    pairs.push_back(parse_train_pair(line, line_number));
  }
  return pairs;
}

}  // namespace mscke
