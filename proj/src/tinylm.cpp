#include "prefopt/tinylm.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "prefopt/errors.hpp"
#include "prefopt/rng.hpp"

namespace prefopt {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kInitScale = 0.02;
constexpr double kGeluK = 0.7978845608028654;  // sqrt(2/pi)

inline double gelu(double x) {
  const double u = kGeluK * (x + 0.044715 * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}

inline double gelu_deriv(double x) {
  const double x2 = x * x;
  const double u = kGeluK * (x + 0.044715 * x * x2);
  const double th = std::tanh(u);
  const double sech2 = 1.0 - th * th;
  return 0.5 * (1.0 + th) + 0.5 * x * sech2 * kGeluK * (1.0 + 3.0 * 0.044715 * x2);
}

struct LNCache {
  std::vector<double> xhat;     // T*d normalized values
  std::vector<double> inv_std;  // T
};

struct BlockCache {
  std::vector<double> a_in;  // T*d block input
  LNCache ln1;
  std::vector<double> h1;          // T*d
  std::vector<double> q, k, v;     // T*d
  std::vector<double> attw;        // H*T*T, per-head row t holds weights for s <= t
  std::vector<double> ctx;         // T*d
  std::vector<double> m_in;        // T*d residual after attention
  LNCache ln2;
  std::vector<double> h2;  // T*d
  std::vector<double> f1;  // T*ff pre-activation
  std::vector<double> a1;  // T*ff post-GELU
};

struct ForwardCache {
  int T = 0;
  int ctx_len = 0;
  std::vector<int> ids;
  std::vector<BlockCache> blocks;
  std::vector<double> fin_in;  // T*d
  LNCache lnf;
  std::vector<double> hf;     // T*d
  std::vector<double> probs;  // n_resp * V softmax rows at scoring positions
};

// y[t] = x[t] * W, x: T x in, W: in x out.
void matmul(const std::vector<double>& x, const Tensor& w, int T, std::vector<double>& y) {
  const int in = w.rows, out = w.cols;
  y.assign(static_cast<size_t>(T) * out, 0.0);
  for (int t = 0; t < T; ++t) {
    const double* xr = x.data() + static_cast<size_t>(t) * in;
    double* yr = y.data() + static_cast<size_t>(t) * out;
    for (int i = 0; i < in; ++i) {
      const double a = xr[i];
      if (a == 0.0) continue;
      const double* wr = w.row(i);
      for (int j = 0; j < out; ++j) yr[j] += a * wr[j];
    }
  }
}

// dW += x^T * dy and dx = dy * W^T for the matmul above.
void matmul_backward(const std::vector<double>& x, const Tensor& w,
                     const std::vector<double>& dy, int T, Tensor& dw,
                     std::vector<double>* dx) {
  const int in = w.rows, out = w.cols;
  for (int t = 0; t < T; ++t) {
    const double* xr = x.data() + static_cast<size_t>(t) * in;
    const double* dyr = dy.data() + static_cast<size_t>(t) * out;
    for (int i = 0; i < in; ++i) {
      const double a = xr[i];
      double* dwr = dw.row(i);
      for (int j = 0; j < out; ++j) dwr[j] += a * dyr[j];
    }
    if (dx) {
      double* dxr = dx->data() + static_cast<size_t>(t) * in;
      for (int i = 0; i < in; ++i) {
        const double* wr = w.row(i);
        double acc = 0.0;
        for (int j = 0; j < out; ++j) acc += wr[j] * dyr[j];
        dxr[i] += acc;
      }
    }
  }
}

void layer_norm_forward(const std::vector<double>& x, const Tensor& gain, const Tensor& offset,
                        int T, int d, LNCache& cache, std::vector<double>& y) {
  cache.xhat.resize(static_cast<size_t>(T) * d);
  cache.inv_std.resize(T);
  y.resize(static_cast<size_t>(T) * d);
  for (int t = 0; t < T; ++t) {
    const double* xr = x.data() + static_cast<size_t>(t) * d;
    double mean = 0.0;
    for (int i = 0; i < d; ++i) mean += xr[i];
    mean /= d;
    double var = 0.0;
    for (int i = 0; i < d; ++i) {
      const double c = xr[i] - mean;
      var += c * c;
    }
    var /= d;
    const double inv_std = 1.0 / std::sqrt(var + kLnEps);
    cache.inv_std[t] = inv_std;
    double* xh = cache.xhat.data() + static_cast<size_t>(t) * d;
    double* yr = y.data() + static_cast<size_t>(t) * d;
    for (int i = 0; i < d; ++i) {
      xh[i] = (xr[i] - mean) * inv_std;
      yr[i] = gain.data[i] * xh[i] + offset.data[i];
    }
  }
}

void layer_norm_backward(const std::vector<double>& dy, const LNCache& cache, const Tensor& gain,
                         int T, int d, Tensor& dgain, Tensor& doffset,
                         std::vector<double>& dx_accum) {
  std::vector<double> dxhat(d);
  for (int t = 0; t < T; ++t) {
    const double* dyr = dy.data() + static_cast<size_t>(t) * d;
    const double* xh = cache.xhat.data() + static_cast<size_t>(t) * d;
    double m1 = 0.0, m2 = 0.0;
    for (int i = 0; i < d; ++i) {
      dxhat[i] = gain.data[i] * dyr[i];
      m1 += dxhat[i];
      m2 += dxhat[i] * xh[i];
      dgain.data[i] += dyr[i] * xh[i];
      doffset.data[i] += dyr[i];
    }
    m1 /= d;
    m2 /= d;
    const double inv_std = cache.inv_std[t];
    double* dxr = dx_accum.data() + static_cast<size_t>(t) * d;
    for (int i = 0; i < d; ++i) dxr[i] += (dxhat[i] - m1 - xh[i] * m2) * inv_std;
  }
}

void check_sequence(const TinyLMConfig& cfg, std::span<const int> context,
                    std::span<const int> response) {
  if (response.empty()) throw std::invalid_argument("response must be nonempty");
  if (context.empty())
    throw LengthError("context must hold at least one token to condition the response");
  const size_t total = context.size() + response.size();
  if (total > static_cast<size_t>(cfg.max_context))
    throw LengthError("sequence of " + std::to_string(total) + " tokens (context " +
                      std::to_string(context.size()) + " + response " +
                      std::to_string(response.size()) + ") exceeds max_context " +
                      std::to_string(cfg.max_context));
  for (int id : context)
    if (id < 0 || id >= cfg.vocab_size)
      throw std::invalid_argument("token id " + std::to_string(id) + " outside vocabulary");
  for (int id : response)
    if (id < 0 || id >= cfg.vocab_size)
      throw std::invalid_argument("token id " + std::to_string(id) + " outside vocabulary");
}

SequenceScore forward_scored(const TinyLMParams& P, std::span<const int> context,
                             std::span<const int> response, ForwardCache* cache) {
  const TinyLMConfig& cfg = P.config;
  check_sequence(cfg, context, response);

  const int T = static_cast<int>(context.size() + response.size());
  const int ctx_len = static_cast<int>(context.size());
  const int d = cfg.d_model, V = cfg.vocab_size, ff = cfg.d_ff;
  const int H = cfg.n_heads, dh = d / H;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  std::vector<int> ids(context.begin(), context.end());
  ids.insert(ids.end(), response.begin(), response.end());

  std::vector<double> x(static_cast<size_t>(T) * d);
  for (int t = 0; t < T; ++t) {
    const double* te = P.tok_emb.row(ids[t]);
    const double* pe = P.pos_emb.row(t);
    double* xr = x.data() + static_cast<size_t>(t) * d;
    for (int i = 0; i < d; ++i) xr[i] = te[i] + pe[i];
  }

  ForwardCache local;
  ForwardCache& c = cache ? *cache : local;
  c.T = T;
  c.ctx_len = ctx_len;
  c.ids = ids;
  c.blocks.resize(P.blocks.size());

  std::vector<double> tmp;
  for (size_t b = 0; b < P.blocks.size(); ++b) {
    const BlockParams& bp = P.blocks[b];
    BlockCache& bc = c.blocks[b];
    bc.a_in = x;

    layer_norm_forward(x, bp.ln1_gain, bp.ln1_offset, T, d, bc.ln1, bc.h1);
    matmul(bc.h1, bp.attn_wq, T, bc.q);
    matmul(bc.h1, bp.attn_wk, T, bc.k);
    matmul(bc.h1, bp.attn_wv, T, bc.v);

    bc.attw.assign(static_cast<size_t>(H) * T * T, 0.0);
    bc.ctx.assign(static_cast<size_t>(T) * d, 0.0);
    std::vector<double> scores(T);
    for (int h = 0; h < H; ++h) {
      const int ofs = h * dh;
      for (int t = 0; t < T; ++t) {
        const double* qt = bc.q.data() + static_cast<size_t>(t) * d + ofs;
        double max_score = -1e300;
        for (int s = 0; s <= t; ++s) {
          const double* ks = bc.k.data() + static_cast<size_t>(s) * d + ofs;
          double acc = 0.0;
          for (int u = 0; u < dh; ++u) acc += qt[u] * ks[u];
          scores[s] = acc * inv_sqrt_dh;
          max_score = std::max(max_score, scores[s]);
        }
        double denom = 0.0;
        double* aw = bc.attw.data() + (static_cast<size_t>(h) * T + t) * T;
        for (int s = 0; s <= t; ++s) {
          aw[s] = std::exp(scores[s] - max_score);
          denom += aw[s];
        }
        double* ct = bc.ctx.data() + static_cast<size_t>(t) * d + ofs;
        for (int s = 0; s <= t; ++s) {
          aw[s] /= denom;
          const double w = aw[s];
          const double* vs = bc.v.data() + static_cast<size_t>(s) * d + ofs;
          for (int u = 0; u < dh; ++u) ct[u] += w * vs[u];
        }
      }
    }

    matmul(bc.ctx, bp.attn_wo, T, tmp);
    for (size_t i = 0; i < x.size(); ++i) x[i] = bc.a_in[i] + tmp[i];
    bc.m_in = x;

    layer_norm_forward(x, bp.ln2_gain, bp.ln2_offset, T, d, bc.ln2, bc.h2);
    matmul(bc.h2, bp.mlp_w1, T, bc.f1);
    for (int t = 0; t < T; ++t) {
      double* fr = bc.f1.data() + static_cast<size_t>(t) * ff;
      for (int j = 0; j < ff; ++j) fr[j] += bp.mlp_b1.data[j];
    }
    bc.a1.resize(bc.f1.size());
    for (size_t i = 0; i < bc.f1.size(); ++i) bc.a1[i] = gelu(bc.f1[i]);
    matmul(bc.a1, bp.mlp_w2, T, tmp);
    for (int t = 0; t < T; ++t) {
      double* tr = tmp.data() + static_cast<size_t>(t) * d;
      for (int i = 0; i < d; ++i) tr[i] += bp.mlp_b2.data[i];
    }
    for (size_t i = 0; i < x.size(); ++i) x[i] = bc.m_in[i] + tmp[i];
  }

  c.fin_in = x;
  layer_norm_forward(x, P.lnf_gain, P.lnf_offset, T, d, c.lnf, c.hf);

  // Log-softmax over the vocabulary at each response position; position p
  // predicts token p + 1, so scoring runs from ctx_len - 1 through T - 2.
  const int n_resp = T - ctx_len;
  c.probs.assign(static_cast<size_t>(n_resp) * V, 0.0);
  SequenceScore score;
  score.per_token.resize(n_resp);
  std::vector<double> logits(V);
  for (int si = 0; si < n_resp; ++si) {
    const int p = ctx_len - 1 + si;
    const double* hr = c.hf.data() + static_cast<size_t>(p) * d;
    std::fill(logits.begin(), logits.end(), 0.0);
    for (int i = 0; i < d; ++i) {
      const double a = hr[i];
      const double* wr = P.out_proj.row(i);
      for (int v = 0; v < V; ++v) logits[v] += a * wr[v];
    }
    double max_logit = logits[0];
    for (int v = 1; v < V; ++v) max_logit = std::max(max_logit, logits[v]);
    double sum_exp = 0.0;
    double* pr = c.probs.data() + static_cast<size_t>(si) * V;
    for (int v = 0; v < V; ++v) {
      pr[v] = std::exp(logits[v] - max_logit);
      sum_exp += pr[v];
    }
    const double log_sum = std::log(sum_exp);
    for (int v = 0; v < V; ++v) pr[v] /= sum_exp;
    const int target = ids[p + 1];
    score.per_token[si] = logits[target] - max_logit - log_sum;
    score.logp += score.per_token[si];
  }
  return score;
}

// Accumulates d(upstream * logp)/d(params) into grads; logp is the sum of
// the per-token log-softmax picks, so every scoring position shares the
// same upstream factor.
void backward_scored(const TinyLMParams& P, const ForwardCache& c, double upstream,
                     TinyLMParams& grads) {
  const TinyLMConfig& cfg = P.config;
  const int T = c.T, ctx_len = c.ctx_len;
  const int d = cfg.d_model, V = cfg.vocab_size, ff = cfg.d_ff;
  const int H = cfg.n_heads, dh = d / H;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  const int n_resp = T - ctx_len;

  std::vector<double> dhf(static_cast<size_t>(T) * d, 0.0);
  std::vector<double> dlogits(V);
  for (int si = 0; si < n_resp; ++si) {
    const int p = ctx_len - 1 + si;
    const int target = c.ids[p + 1];
    const double* pr = c.probs.data() + static_cast<size_t>(si) * V;
    for (int v = 0; v < V; ++v) dlogits[v] = -upstream * pr[v];
    dlogits[target] += upstream;

    const double* hr = c.hf.data() + static_cast<size_t>(p) * d;
    double* dhr = dhf.data() + static_cast<size_t>(p) * d;
    for (int i = 0; i < d; ++i) {
      const double* wr = P.out_proj.row(i);
      double* gwr = grads.out_proj.row(i);
      const double a = hr[i];
      double acc = 0.0;
      for (int v = 0; v < V; ++v) {
        acc += wr[v] * dlogits[v];
        gwr[v] += a * dlogits[v];
      }
      dhr[i] += acc;
    }
  }

  std::vector<double> dx(static_cast<size_t>(T) * d, 0.0);
  layer_norm_backward(dhf, c.lnf, P.lnf_gain, T, d, grads.lnf_gain, grads.lnf_offset, dx);

  std::vector<double> dm_in, dh2, df1, da1, dctx, dh1, dq, dk, dv;
  std::vector<double> dattw(T);
  for (size_t bi = P.blocks.size(); bi-- > 0;) {
    const BlockParams& bp = P.blocks[bi];
    BlockParams& gb = grads.blocks[bi];
    const BlockCache& bc = c.blocks[bi];

    // x_out = m_in + mlp(h2); dx flows to both summands.
    dm_in = dx;
    da1.assign(static_cast<size_t>(T) * ff, 0.0);
    matmul_backward(bc.a1, bp.mlp_w2, dx, T, gb.mlp_w2, &da1);
    for (int t = 0; t < T; ++t) {
      const double* dr = dx.data() + static_cast<size_t>(t) * d;
      for (int i = 0; i < d; ++i) gb.mlp_b2.data[i] += dr[i];
    }
    df1.resize(da1.size());
    for (size_t i = 0; i < da1.size(); ++i) df1[i] = da1[i] * gelu_deriv(bc.f1[i]);
    dh2.assign(static_cast<size_t>(T) * d, 0.0);
    matmul_backward(bc.h2, bp.mlp_w1, df1, T, gb.mlp_w1, &dh2);
    for (int t = 0; t < T; ++t) {
      const double* dr = df1.data() + static_cast<size_t>(t) * ff;
      for (int j = 0; j < ff; ++j) gb.mlp_b1.data[j] += dr[j];
    }
    layer_norm_backward(dh2, bc.ln2, bp.ln2_gain, T, d, gb.ln2_gain, gb.ln2_offset, dm_in);

    // m_in = a_in + attn(h1); dm_in flows to the residual and to Wo.
    dx = dm_in;  // becomes d(a_in)
    dctx.assign(static_cast<size_t>(T) * d, 0.0);
    matmul_backward(bc.ctx, bp.attn_wo, dm_in, T, gb.attn_wo, &dctx);

    dq.assign(static_cast<size_t>(T) * d, 0.0);
    dk.assign(static_cast<size_t>(T) * d, 0.0);
    dv.assign(static_cast<size_t>(T) * d, 0.0);
    for (int h = 0; h < H; ++h) {
      const int ofs = h * dh;
      for (int t = 0; t < T; ++t) {
        const double* dct = dctx.data() + static_cast<size_t>(t) * d + ofs;
        const double* aw = bc.attw.data() + (static_cast<size_t>(h) * T + t) * T;
        double dot_sum = 0.0;
        for (int s = 0; s <= t; ++s) {
          const double* vs = bc.v.data() + static_cast<size_t>(s) * d + ofs;
          double* dvs = dv.data() + static_cast<size_t>(s) * d + ofs;
          double acc = 0.0;
          const double w = aw[s];
          for (int u = 0; u < dh; ++u) {
            acc += dct[u] * vs[u];
            dvs[u] += w * dct[u];
          }
          dattw[s] = acc;
          dot_sum += w * acc;
        }
        const double* qt = bc.q.data() + static_cast<size_t>(t) * d + ofs;
        double* dqt = dq.data() + static_cast<size_t>(t) * d + ofs;
        for (int s = 0; s <= t; ++s) {
          const double dscore = aw[s] * (dattw[s] - dot_sum) * inv_sqrt_dh;
          if (dscore == 0.0) continue;
          const double* ks = bc.k.data() + static_cast<size_t>(s) * d + ofs;
          double* dks = dk.data() + static_cast<size_t>(s) * d + ofs;
          for (int u = 0; u < dh; ++u) {
            dqt[u] += dscore * ks[u];
            dks[u] += dscore * qt[u];
          }
        }
      }
    }

    dh1.assign(static_cast<size_t>(T) * d, 0.0);
    matmul_backward(bc.h1, bp.attn_wq, dq, T, gb.attn_wq, &dh1);
    matmul_backward(bc.h1, bp.attn_wk, dk, T, gb.attn_wk, &dh1);
    matmul_backward(bc.h1, bp.attn_wv, dv, T, gb.attn_wv, &dh1);
    layer_norm_backward(dh1, bc.ln1, bp.ln1_gain, T, d, gb.ln1_gain, gb.ln1_offset, dx);
  }

  for (int t = 0; t < T; ++t) {
    const double* dr = dx.data() + static_cast<size_t>(t) * d;
    double* gt = grads.tok_emb.row(c.ids[t]);
    double* gp = grads.pos_emb.row(t);
    for (int i = 0; i < d; ++i) {
      gt[i] += dr[i];
      gp[i] += dr[i];
    }
  }
}

}  // namespace

void TinyLMConfig::validate() const {
  if (vocab_size < 2) throw ConfigError("vocab_size must be >= 2");
  if (d_model < 1 || n_layers < 1 || n_heads < 1 || d_ff < 1)
    throw ConfigError("model dimensions must be positive");
  if (d_model % n_heads != 0) throw ConfigError("d_model must be divisible by n_heads");
  if (max_context < 2) throw ConfigError("max_context must be >= 2");
}

std::vector<NamedTensor> named_tensors(TinyLMParams& p) {
  std::vector<NamedTensor> out;
  out.push_back({"tok_emb", &p.tok_emb});
  out.push_back({"pos_emb", &p.pos_emb});
  for (size_t i = 0; i < p.blocks.size(); ++i) {
    const std::string prefix = "block" + std::to_string(i) + ".";
    BlockParams& b = p.blocks[i];
    out.push_back({prefix + "attn_wq", &b.attn_wq});
    out.push_back({prefix + "attn_wk", &b.attn_wk});
    out.push_back({prefix + "attn_wv", &b.attn_wv});
    out.push_back({prefix + "attn_wo", &b.attn_wo});
    out.push_back({prefix + "ln1_gain", &b.ln1_gain});
    out.push_back({prefix + "ln1_offset", &b.ln1_offset});
    out.push_back({prefix + "mlp_w1", &b.mlp_w1});
    out.push_back({prefix + "mlp_b1", &b.mlp_b1});
    out.push_back({prefix + "mlp_w2", &b.mlp_w2});
    out.push_back({prefix + "mlp_b2", &b.mlp_b2});
    out.push_back({prefix + "ln2_gain", &b.ln2_gain});
    out.push_back({prefix + "ln2_offset", &b.ln2_offset});
  }
  out.push_back({"lnf_gain", &p.lnf_gain});
  out.push_back({"lnf_offset", &p.lnf_offset});
  out.push_back({"out_proj", &p.out_proj});
  return out;
}

std::vector<NamedTensorConst> named_tensors(const TinyLMParams& p) {
  auto mutable_list = named_tensors(const_cast<TinyLMParams&>(p));
  std::vector<NamedTensorConst> out;
  out.reserve(mutable_list.size());
  for (auto& nt : mutable_list) out.push_back({nt.name, nt.tensor});
  return out;
}

namespace {

TinyLMParams make_shaped(const TinyLMConfig& cfg) {
  cfg.validate();
  TinyLMParams p;
  p.config = cfg;
  p.tok_emb = Tensor(cfg.vocab_size, cfg.d_model);
  p.pos_emb = Tensor(cfg.max_context, cfg.d_model);
  p.blocks.resize(cfg.n_layers);
  for (BlockParams& b : p.blocks) {
    b.attn_wq = Tensor(cfg.d_model, cfg.d_model);
    b.attn_wk = Tensor(cfg.d_model, cfg.d_model);
    b.attn_wv = Tensor(cfg.d_model, cfg.d_model);
    b.attn_wo = Tensor(cfg.d_model, cfg.d_model);
    b.ln1_gain = Tensor(1, cfg.d_model);
    b.ln1_offset = Tensor(1, cfg.d_model);
    b.mlp_w1 = Tensor(cfg.d_model, cfg.d_ff);
    b.mlp_b1 = Tensor(1, cfg.d_ff);
    b.mlp_w2 = Tensor(cfg.d_ff, cfg.d_model);
    b.mlp_b2 = Tensor(1, cfg.d_model);
    b.ln2_gain = Tensor(1, cfg.d_model);
    b.ln2_offset = Tensor(1, cfg.d_model);
  }
  p.lnf_gain = Tensor(1, cfg.d_model);
  p.lnf_offset = Tensor(1, cfg.d_model);
  p.out_proj = Tensor(cfg.d_model, cfg.vocab_size);
  return p;
}

}  // namespace

TinyLMParams init_params(const TinyLMConfig& cfg) {
  TinyLMParams p = make_shaped(cfg);
  DetRng rng(cfg.seed);
  for (NamedTensor nt : named_tensors(p)) {
    const bool is_gain = nt.name.find("gain") != std::string::npos;
    const bool is_zero = nt.name.find("offset") != std::string::npos ||
                         nt.name.find("_b") != std::string::npos;
    if (is_gain) {
      nt.tensor->fill(1.0);
    } else if (is_zero) {
      nt.tensor->fill(0.0);
    } else {
      for (double& v : nt.tensor->data) v = rng.normal() * kInitScale;
    }
  }
  return p;
}

TinyLMParams zeros_like(const TinyLMParams& p) { return make_shaped(p.config); }

SequenceScore sequence_log_likelihood(const TinyLMParams& params, std::span<const int> context,
                                      std::span<const int> response) {
  return forward_scored(params, context, response, nullptr);
}

std::vector<std::vector<double>> response_token_distributions(const TinyLMParams& params,
                                                              std::span<const int> context,
                                                              std::span<const int> response) {
  ForwardCache cache;
  forward_scored(params, context, response, &cache);
  const int V = params.config.vocab_size;
  const int n_resp = cache.T - cache.ctx_len;
  std::vector<std::vector<double>> out(n_resp);
  for (int si = 0; si < n_resp; ++si) {
    const double* pr = cache.probs.data() + static_cast<size_t>(si) * V;
    out[si].assign(pr, pr + V);
  }
  return out;
}

PairScores pair_scores(const TinyLMParams& params, const TinyLMParams* ref_params,
                       const TokenizedPair& pair, const ObjectiveConfig& cfg) {
  const bool need_ref = cfg.kind == ObjectiveKind::DPO || cfg.kind == ObjectiveKind::DPONLL;
  if (need_ref && !ref_params)
    throw ConfigError("objective '" + to_string(cfg.kind) + "' requires a reference policy");
  PairScores s;
  s.logp_w = sequence_log_likelihood(params, pair.context_tokens, pair.resp_w_tokens).logp;
  s.logp_l = sequence_log_likelihood(params, pair.context_tokens, pair.resp_l_tokens).logp;
  s.len_w = static_cast<int>(pair.resp_w_tokens.size());
  s.len_l = static_cast<int>(pair.resp_l_tokens.size());
  if (ref_params) {
    s.ref_logp_w =
        sequence_log_likelihood(*ref_params, pair.context_tokens, pair.resp_w_tokens).logp;
    s.ref_logp_l =
        sequence_log_likelihood(*ref_params, pair.context_tokens, pair.resp_l_tokens).logp;
  }
  return s;
}

BatchBackward backward(const TinyLMParams& params, const TinyLMParams* ref_params,
                       std::span<const TokenizedPair> batch, const ObjectiveConfig& cfg) {
  if (batch.empty()) throw std::invalid_argument("backward requires a nonempty batch");
  BatchBackward result;
  result.grads = zeros_like(params);
  result.per_pair.reserve(batch.size());
  result.delta_r.reserve(batch.size());
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  double loss_sum = 0.0;
  for (const TokenizedPair& pair : batch) {
    try {
      ForwardCache cache_w, cache_l;
      PairScores s;
      s.logp_w = forward_scored(params, pair.context_tokens, pair.resp_w_tokens, &cache_w).logp;
      s.logp_l = forward_scored(params, pair.context_tokens, pair.resp_l_tokens, &cache_l).logp;
      s.len_w = static_cast<int>(pair.resp_w_tokens.size());
      s.len_l = static_cast<int>(pair.resp_l_tokens.size());
      if (ref_params) {
        s.ref_logp_w =
            sequence_log_likelihood(*ref_params, pair.context_tokens, pair.resp_w_tokens).logp;
        s.ref_logp_l =
            sequence_log_likelihood(*ref_params, pair.context_tokens, pair.resp_l_tokens).logp;
      }
      const LossResult lr = pair_loss(s, cfg);
      loss_sum += lr.loss;
      backward_scored(params, cache_w, lr.grad_logp_w * inv_n, result.grads);
      backward_scored(params, cache_l, lr.grad_logp_l * inv_n, result.grads);
      result.delta_r.push_back(reward_difference(s, cfg));
      result.per_pair.push_back(lr);
    } catch (const LengthError& e) {
      throw LengthError("pair '" + (pair.id.empty() ? std::string("<unnamed>") : pair.id) +
                        "': " + e.what());
    }
  }
  result.mean_loss = loss_sum * inv_n;
  return result;
}

}  // namespace prefopt
