#include "stereoroma/denoiser.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "stereoroma/error.hpp"
#include "stereoroma/parallel.hpp"

namespace stereoroma {

// ---------------------------------------------------------------------------------
// Spec
// ---------------------------------------------------------------------------------

namespace {

std::vector<std::string> split_tokens(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

int token_channels(const std::string& tok) {
  if (tok == "left" || tok == "right") return 1;
  if (tok == "raw") return 2;
  if (tok == "color") return 3;
  fail(Errc::config_error, "unknown conditioning input '" + tok + "'");
}

int group_count(int c) {
  for (int g : {8, 4, 2, 1})
    if (c % g == 0) return g;
  return 1;
}

}  // namespace

int DenoiserSpec::cond_channels(const std::string& cond) {
  if (cond == "none" || cond.empty()) return 0;
  int n = 0;
  for (const auto& tok : split_tokens(cond, '+')) n += token_channels(tok);
  return n;
}

int DenoiserSpec::width_at(int level) const { return base_width << std::min(level, 2); }

void DenoiserSpec::validate() const {
  cond_channels(cond);
  require(base_width >= 1, Errc::config_error, "model.base_width must be >= 1");
  require(depth >= 1 && depth <= 6, Errc::config_error, "model.depth must be in [1, 6]");
  require(time_embed_dim >= 2 && time_embed_dim % 2 == 0, Errc::config_error,
          "model.time_embed_dim must be even and >= 2");
}

std::size_t ParamTensor::size() const {
  std::size_t n = 1;
  for (int s : shape) n *= static_cast<std::size_t>(s);
  return n;
}

// ---------------------------------------------------------------------------------
// Architecture: offsets of every tensor in the flat parameter vector
// ---------------------------------------------------------------------------------

namespace {

struct ConvDesc {
  std::size_t w = 0, b = 0;
  int cin = 0, cout = 0, k = 1;
};
struct NormDesc {
  std::size_t gamma = 0, beta = 0;
  int c = 0, groups = 1;
};
struct LinearDesc {
  std::size_t w = 0, b = 0;
  int in = 0, out = 0;
};
struct BlockDesc {
  int cin = 0, cout = 0;
  NormDesc n1;
  ConvDesc c1;
  LinearDesc temb;
  NormDesc n2;
  ConvDesc c2;
  bool has_skip = false;
  ConvDesc skip;
};
struct Arch {
  int in_channels = 0;
  int depth = 0;
  int embed = 0;
  LinearDesc time;
  ConvDesc in_conv;
  std::vector<BlockDesc> down;
  BlockDesc mid;
  std::vector<BlockDesc> up;
  NormDesc out_norm;
  ConvDesc out_conv;
  std::vector<ParamTensor> layout;
  std::size_t total = 0;
};

class ArchBuilder {
 public:
  explicit ArchBuilder(Arch& a) : a_(a) {}

  std::size_t add(const std::string& name, std::vector<int> shape) {
    ParamTensor t{name, a_.total, std::move(shape)};
    a_.total += t.size();
    a_.layout.push_back(t);
    return t.offset;
  }
  ConvDesc conv(const std::string& name, int cin, int cout, int k) {
    ConvDesc d;
    d.cin = cin;
    d.cout = cout;
    d.k = k;
    d.w = add(name + ".weight", {cout, cin, k, k});
    d.b = add(name + ".bias", {cout});
    return d;
  }
  NormDesc norm(const std::string& name, int c) {
    NormDesc d;
    d.c = c;
    d.groups = group_count(c);
    d.gamma = add(name + ".gamma", {c});
    d.beta = add(name + ".beta", {c});
    return d;
  }
  LinearDesc linear(const std::string& name, int in, int out) {
    LinearDesc d;
    d.in = in;
    d.out = out;
    d.w = add(name + ".weight", {out, in});
    d.b = add(name + ".bias", {out});
    return d;
  }
  BlockDesc block(const std::string& name, int cin, int cout, int embed) {
    BlockDesc b;
    b.cin = cin;
    b.cout = cout;
    b.n1 = norm(name + ".norm1", cin);
    b.c1 = conv(name + ".conv1", cin, cout, 3);
    b.temb = linear(name + ".temb", embed, cout);
    b.n2 = norm(name + ".norm2", cout);
    b.c2 = conv(name + ".conv2", cout, cout, 3);
    b.has_skip = cin != cout;
    if (b.has_skip) b.skip = conv(name + ".skip", cin, cout, 1);
    return b;
  }

 private:
  Arch& a_;
};

Arch build_arch(const DenoiserSpec& spec) {
  spec.validate();
  Arch a;
  a.in_channels = spec.in_channels();
  a.depth = spec.depth;
  a.embed = spec.time_embed_dim;
  ArchBuilder b(a);
  const int E = spec.time_embed_dim;
  a.time = b.linear("time", E, E);
  a.in_conv = b.conv("in", a.in_channels, spec.width_at(0), 3);
  for (int l = 0; l < spec.depth; ++l)
    a.down.push_back(b.block("down" + std::to_string(l), spec.width_at(l == 0 ? 0 : l - 1), spec.width_at(l), E));
  a.mid = b.block("mid", spec.width_at(spec.depth - 1), spec.width_at(spec.depth), E);
  a.up.resize(spec.depth);
  for (int l = spec.depth - 1; l >= 0; --l)
    a.up[l] = b.block("up" + std::to_string(l), spec.width_at(l + 1) + spec.width_at(l), spec.width_at(l), E);
  a.out_norm = b.norm("out.norm", spec.width_at(0));
  a.out_conv = b.conv("out.conv", spec.width_at(0), 1, 3);
  return a;
}

// ---------------------------------------------------------------------------------
// Tensor ops with hand-written adjoints
// ---------------------------------------------------------------------------------

template <class T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapR = Eigen::Map<MatR<T>>;
template <class T>
using CMapR = Eigen::Map<const MatR<T>>;

template <class T>
struct Tensor {
  int c = 0, h = 0, w = 0;
  std::vector<T> d;
  Tensor() = default;
  Tensor(int c_, int h_, int w_) : c(c_), h(h_), w(w_), d(static_cast<std::size_t>(c_) * h_ * w_, T(0)) {}
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  T* ch(int k) { return d.data() + k * plane(); }
  const T* ch(int k) const { return d.data() + k * plane(); }
};

template <class T>
void add_into(Tensor<T>& dst, const Tensor<T>& src) {
  for (std::size_t i = 0; i < dst.d.size(); ++i) dst.d[i] += src.d[i];
}

// Convolution (stride 1, zero padding k/2) as a GEMM over an im2col matrix.
template <class T>
struct ConvCache {
  std::vector<T> col;  // (cin*k*k) x (h*w)
  int h = 0, w = 0;
};

template <class T>
void im2col(const Tensor<T>& x, int k, std::vector<T>& col) {
  const int r = k / 2;
  const std::size_t HW = x.plane();
  col.assign(static_cast<std::size_t>(x.c) * k * k * HW, T(0));
  for (int c = 0; c < x.c; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        T* row = col.data() + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * HW;
        const T* src = x.ch(c);
        const int dy = ky - r, dx = kx - r;
        for (int y = 0; y < x.h; ++y) {
          const int sy = y + dy;
          if (sy < 0 || sy >= x.h) continue;
          const int xs = std::max(0, -dx), xe = std::min(x.w, x.w - dx);
          for (int xx = xs; xx < xe; ++xx) row[y * x.w + xx] = src[sy * x.w + xx + dx];
        }
      }
}

template <class T>
void col2im(const std::vector<T>& col, int k, Tensor<T>& x) {
  const int r = k / 2;
  const std::size_t HW = x.plane();
  for (int c = 0; c < x.c; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const T* row = col.data() + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * HW;
        T* dst = x.ch(c);
        const int dy = ky - r, dx = kx - r;
        for (int y = 0; y < x.h; ++y) {
          const int sy = y + dy;
          if (sy < 0 || sy >= x.h) continue;
          const int xs = std::max(0, -dx), xe = std::min(x.w, x.w - dx);
          for (int xx = xs; xx < xe; ++xx) dst[sy * x.w + xx + dx] += row[y * x.w + xx];
        }
      }
}

template <class T>
Tensor<T> conv_fwd(const ConvDesc& cd, const T* p, const Tensor<T>& x, ConvCache<T>& cache) {
  const int HW = static_cast<int>(x.plane());
  const int K = cd.cin * cd.k * cd.k;
  if (cd.k == 1)
    cache.col = x.d;
  else
    im2col(x, cd.k, cache.col);
  cache.h = x.h;
  cache.w = x.w;
  Tensor<T> y(cd.cout, x.h, x.w);
  MapR<T> Y(y.d.data(), cd.cout, HW);
  Y.noalias() = CMapR<T>(p + cd.w, cd.cout, K) * CMapR<T>(cache.col.data(), K, HW);
  for (int o = 0; o < cd.cout; ++o) Y.row(o).array() += p[cd.b + o];
  return y;
}

template <class T>
Tensor<T> conv_bwd(const ConvDesc& cd, const T* p, T* g, const Tensor<T>& gy, const ConvCache<T>& cache) {
  const int HW = cache.h * cache.w;
  const int K = cd.cin * cd.k * cd.k;
  CMapR<T> GY(gy.d.data(), cd.cout, HW);
  CMapR<T> COL(cache.col.data(), K, HW);
  MapR<T>(g + cd.w, cd.cout, K).noalias() += GY * COL.transpose();
  // Plain loop: Eigen's vectorized sum() peels by address alignment, which
  // would make the summation order (and the result) allocation-dependent.
  for (int o = 0; o < cd.cout; ++o) {
    T s = 0;
    for (const T* r = gy.ch(o); r != gy.ch(o) + HW; ++r) s += *r;
    g[cd.b + o] += s;
  }
  Tensor<T> gx(cd.cin, cache.h, cache.w);
  if (cd.k == 1) {
    MapR<T>(gx.d.data(), K, HW).noalias() = CMapR<T>(p + cd.w, cd.cout, K).transpose() * GY;
  } else {
    std::vector<T> dcol(static_cast<std::size_t>(K) * HW);
    MapR<T>(dcol.data(), K, HW).noalias() = CMapR<T>(p + cd.w, cd.cout, K).transpose() * GY;
    col2im(dcol, cd.k, gx);
  }
  return gx;
}

// Group normalization with per-channel affine.
constexpr double kNormEps = 1e-5;

template <class T>
struct NormCache {
  std::vector<T> xhat;
  std::vector<T> inv_std;  // per group
};

template <class T>
Tensor<T> norm_fwd(const NormDesc& nd, const T* p, const Tensor<T>& x, NormCache<T>& cache) {
  const int cpg = x.c / nd.groups;
  const std::size_t HW = x.plane();
  const std::size_t n = cpg * HW;
  cache.xhat.resize(x.d.size());
  cache.inv_std.resize(nd.groups);
  Tensor<T> y(x.c, x.h, x.w);
  for (int g = 0; g < nd.groups; ++g) {
    const T* src = x.d.data() + g * n;
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += src[i];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (src[i] - mean) * (src[i] - mean);
    var /= static_cast<double>(n);
    const T inv = static_cast<T>(1.0 / std::sqrt(var + kNormEps));
    cache.inv_std[g] = inv;
    const T m = static_cast<T>(mean);
    for (int cc = 0; cc < cpg; ++cc) {
      const int c = g * cpg + cc;
      const T gamma = p[nd.gamma + c], beta = p[nd.beta + c];
      for (std::size_t i = 0; i < HW; ++i) {
        const std::size_t idx = c * HW + i;
        const T xh = (x.d[idx] - m) * inv;
        cache.xhat[idx] = xh;
        y.d[idx] = gamma * xh + beta;
      }
    }
  }
  return y;
}

template <class T>
Tensor<T> norm_bwd(const NormDesc& nd, const T* p, T* gp, const Tensor<T>& gy, const NormCache<T>& cache) {
  const int cpg = gy.c / nd.groups;
  const std::size_t HW = gy.plane();
  const std::size_t n = cpg * HW;
  Tensor<T> gx(gy.c, gy.h, gy.w);
  std::vector<T> dxhat(n);
  for (int g = 0; g < nd.groups; ++g) {
    double m1 = 0.0, m2 = 0.0;
    for (int cc = 0; cc < cpg; ++cc) {
      const int c = g * cpg + cc;
      const T gamma = p[nd.gamma + c];
      double sg = 0.0, sb = 0.0;
      for (std::size_t i = 0; i < HW; ++i) {
        const std::size_t idx = c * HW + i;
        sg += gy.d[idx] * cache.xhat[idx];
        sb += gy.d[idx];
        const T dh = gy.d[idx] * gamma;
        dxhat[cc * HW + i] = dh;
        m1 += dh;
        m2 += dh * cache.xhat[idx];
      }
      gp[nd.gamma + c] += static_cast<T>(sg);
      gp[nd.beta + c] += static_cast<T>(sb);
    }
    const T a = static_cast<T>(m1 / static_cast<double>(n));
    const T b = static_cast<T>(m2 / static_cast<double>(n));
    const T inv = cache.inv_std[g];
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t idx = g * n + i;
      gx.d[idx] = inv * (dxhat[i] - a - cache.xhat[idx] * b);
    }
  }
  return gx;
}

template <class T>
T sigmoid(T v) {
  return T(1) / (T(1) + std::exp(-v));
}

template <class T>
Tensor<T> silu_fwd(const Tensor<T>& x) {
  Tensor<T> y(x.c, x.h, x.w);
  for (std::size_t i = 0; i < x.d.size(); ++i) y.d[i] = x.d[i] * sigmoid(x.d[i]);
  return y;
}

template <class T>
Tensor<T> silu_bwd(const Tensor<T>& gy, const Tensor<T>& x) {
  Tensor<T> gx(x.c, x.h, x.w);
  for (std::size_t i = 0; i < x.d.size(); ++i) {
    const T s = sigmoid(x.d[i]);
    gx.d[i] = gy.d[i] * (s + x.d[i] * s * (T(1) - s));
  }
  return gx;
}

template <class T>
Tensor<T> pool_fwd(const Tensor<T>& x) {
  Tensor<T> y(x.c, x.h / 2, x.w / 2);
  for (int c = 0; c < x.c; ++c)
    for (int yy = 0; yy < y.h; ++yy)
      for (int xx = 0; xx < y.w; ++xx) {
        const T* s = x.ch(c);
        const int i = 2 * yy * x.w + 2 * xx;
        y.ch(c)[yy * y.w + xx] = T(0.25) * (s[i] + s[i + 1] + s[i + x.w] + s[i + x.w + 1]);
      }
  return y;
}

template <class T>
Tensor<T> pool_bwd(const Tensor<T>& gy, int h, int w) {
  Tensor<T> gx(gy.c, h, w);
  for (int c = 0; c < gy.c; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) gx.ch(c)[y * w + x] = T(0.25) * gy.ch(c)[(y / 2) * gy.w + x / 2];
  return gx;
}

template <class T>
Tensor<T> upsample_fwd(const Tensor<T>& x) {
  Tensor<T> y(x.c, x.h * 2, x.w * 2);
  for (int c = 0; c < x.c; ++c)
    for (int yy = 0; yy < y.h; ++yy)
      for (int xx = 0; xx < y.w; ++xx) y.ch(c)[yy * y.w + xx] = x.ch(c)[(yy / 2) * x.w + xx / 2];
  return y;
}

template <class T>
Tensor<T> upsample_bwd(const Tensor<T>& gy) {
  Tensor<T> gx(gy.c, gy.h / 2, gy.w / 2);
  for (int c = 0; c < gy.c; ++c)
    for (int y = 0; y < gy.h; ++y)
      for (int x = 0; x < gy.w; ++x) gx.ch(c)[(y / 2) * gx.w + x / 2] += gy.ch(c)[y * gy.w + x];
  return gx;
}

template <class T>
Tensor<T> concat(const Tensor<T>& a, const Tensor<T>& b) {
  Tensor<T> y(a.c + b.c, a.h, a.w);
  std::copy(a.d.begin(), a.d.end(), y.d.begin());
  std::copy(b.d.begin(), b.d.end(), y.d.begin() + static_cast<std::ptrdiff_t>(a.d.size()));
  return y;
}

template <class T>
std::pair<Tensor<T>, Tensor<T>> split(const Tensor<T>& g, int ca) {
  Tensor<T> a(ca, g.h, g.w), b(g.c - ca, g.h, g.w);
  std::copy(g.d.begin(), g.d.begin() + static_cast<std::ptrdiff_t>(a.d.size()), a.d.begin());
  std::copy(g.d.begin() + static_cast<std::ptrdiff_t>(a.d.size()), g.d.end(), b.d.begin());
  return {std::move(a), std::move(b)};
}

// Residual block: GN-SiLU-conv (+ time bias) GN-SiLU-conv, plus identity or 1x1 skip.
template <class T>
struct BlockCache {
  NormCache<T> n1, n2;
  Tensor<T> a1, a2;  // pre-activation inputs to SiLU
  ConvCache<T> c1, c2, skip;
};

template <class T>
Tensor<T> block_fwd(const BlockDesc& bd, const T* p, const Tensor<T>& x, const std::vector<T>& temb,
                    BlockCache<T>& cache) {
  cache.a1 = norm_fwd(bd.n1, p, x, cache.n1);
  Tensor<T> h = conv_fwd(bd.c1, p, silu_fwd(cache.a1), cache.c1);
  for (int o = 0; o < bd.cout; ++o) {
    T bias = p[bd.temb.b + o];
    const T* w = p + bd.temb.w + static_cast<std::size_t>(o) * bd.temb.in;
    for (int i = 0; i < bd.temb.in; ++i) bias += w[i] * temb[i];
    T* row = h.ch(o);
    for (std::size_t i = 0; i < h.plane(); ++i) row[i] += bias;
  }
  cache.a2 = norm_fwd(bd.n2, p, h, cache.n2);
  Tensor<T> out = conv_fwd(bd.c2, p, silu_fwd(cache.a2), cache.c2);
  if (bd.has_skip)
    add_into(out, conv_fwd(bd.skip, p, x, cache.skip));
  else
    add_into(out, x);
  return out;
}

template <class T>
Tensor<T> block_bwd(const BlockDesc& bd, const T* p, T* g, const Tensor<T>& gout, const std::vector<T>& temb,
                    std::vector<T>& gtemb, const BlockCache<T>& cache) {
  Tensor<T> gs2 = conv_bwd(bd.c2, p, g, gout, cache.c2);
  Tensor<T> gh = norm_bwd(bd.n2, p, g, silu_bwd(gs2, cache.a2), cache.n2);
  for (int o = 0; o < bd.cout; ++o) {
    const T* row = gh.ch(o);
    T gb = 0;
    for (std::size_t i = 0; i < gh.plane(); ++i) gb += row[i];
    g[bd.temb.b + o] += gb;
    T* gw = g + bd.temb.w + static_cast<std::size_t>(o) * bd.temb.in;
    const T* w = p + bd.temb.w + static_cast<std::size_t>(o) * bd.temb.in;
    for (int i = 0; i < bd.temb.in; ++i) {
      gw[i] += gb * temb[i];
      gtemb[i] += gb * w[i];
    }
  }
  Tensor<T> gs1 = conv_bwd(bd.c1, p, g, gh, cache.c1);
  Tensor<T> gx = norm_bwd(bd.n1, p, g, silu_bwd(gs1, cache.a1), cache.n1);
  if (bd.has_skip)
    add_into(gx, conv_bwd(bd.skip, p, g, gout, cache.skip));
  else
    add_into(gx, gout);
  return gx;
}

// Whole network.
template <class T>
struct NetCache {
  std::vector<T> embed;    // sinusoidal input
  std::vector<T> time_pre;  // pre-activation of the time MLP
  std::vector<T> temb;      // SiLU(time_pre)
  ConvCache<T> in_conv;
  std::vector<BlockCache<T>> down, up;
  BlockCache<T> mid;
  std::vector<std::pair<int, int>> level_hw;
  NormCache<T> out_norm;
  Tensor<T> out_pre;
  ConvCache<T> out_conv;
};

template <class T>
Tensor<T> input_tensor(const Arch& a, const FieldD& x_t, const FeatureMap& cond) {
  require(cond.channels == a.in_channels - 1, Errc::dimension_mismatch,
          "denoiser: conditioning has " + std::to_string(cond.channels) + " channels, model expects " +
              std::to_string(a.in_channels - 1));
  require(cond.channels == 0 || (cond.width == x_t.width && cond.height == x_t.height), Errc::dimension_mismatch,
          "denoiser: conditioning size differs from x_t");
  const int div = 1 << a.depth;
  require(x_t.width % div == 0 && x_t.height % div == 0 && x_t.width > 0 && x_t.height > 0,
          Errc::dimension_mismatch,
          "denoiser: input size must be a positive multiple of " + std::to_string(div));
  Tensor<T> x(a.in_channels, x_t.height, x_t.width);
  for (std::size_t i = 0; i < x_t.size(); ++i) x.d[i] = static_cast<T>(x_t.values[i]);
  for (std::size_t i = 0; i < cond.data.size(); ++i) x.d[x_t.size() + i] = static_cast<T>(cond.data[i]);
  return x;
}

template <class T>
Tensor<T> net_fwd(const Arch& a, const T* p, const Tensor<T>& x, int t, NetCache<T>& cache) {
  const auto e = time_embedding(static_cast<double>(t), a.embed);
  cache.embed.assign(e.begin(), e.end());
  cache.time_pre.assign(a.embed, T(0));
  cache.temb.assign(a.embed, T(0));
  for (int o = 0; o < a.embed; ++o) {
    T v = p[a.time.b + o];
    for (int i = 0; i < a.embed; ++i) v += p[a.time.w + static_cast<std::size_t>(o) * a.embed + i] * cache.embed[i];
    cache.time_pre[o] = v;
    cache.temb[o] = v * sigmoid(v);
  }

  cache.down.resize(a.depth);
  cache.up.resize(a.depth);
  cache.level_hw.clear();
  Tensor<T> h = conv_fwd(a.in_conv, p, x, cache.in_conv);
  std::vector<Tensor<T>> skips;
  for (int l = 0; l < a.depth; ++l) {
    h = block_fwd(a.down[l], p, h, cache.temb, cache.down[l]);
    cache.level_hw.emplace_back(h.h, h.w);
    skips.push_back(h);
    h = pool_fwd(h);
  }
  h = block_fwd(a.mid, p, h, cache.temb, cache.mid);
  for (int l = a.depth - 1; l >= 0; --l) {
    h = concat(upsample_fwd(h), skips[l]);
    h = block_fwd(a.up[l], p, h, cache.temb, cache.up[l]);
  }
  cache.out_pre = norm_fwd(a.out_norm, p, h, cache.out_norm);
  return conv_fwd(a.out_conv, p, silu_fwd(cache.out_pre), cache.out_conv);
}

template <class T>
void net_bwd(const Arch& a, const T* p, T* g, const Tensor<T>& gy, const NetCache<T>& cache) {
  std::vector<T> gtemb(a.embed, T(0));
  Tensor<T> gs = conv_bwd(a.out_conv, p, g, gy, cache.out_conv);
  Tensor<T> gh = norm_bwd(a.out_norm, p, g, silu_bwd(gs, cache.out_pre), cache.out_norm);
  std::vector<Tensor<T>> gskip(a.depth);
  for (int l = 0; l < a.depth; ++l) {
    Tensor<T> gcat = block_bwd(a.up[l], p, g, gh, cache.temb, gtemb, cache.up[l]);
    auto [gu, gsk] = split(gcat, a.up[l].cin - a.down[l].cout);
    gskip[l] = std::move(gsk);
    gh = upsample_bwd(gu);
  }
  gh = block_bwd(a.mid, p, g, gh, cache.temb, gtemb, cache.mid);
  for (int l = a.depth - 1; l >= 0; --l) {
    Tensor<T> gd = pool_bwd(gh, cache.level_hw[l].first, cache.level_hw[l].second);
    add_into(gd, gskip[l]);
    gh = block_bwd(a.down[l], p, g, gd, cache.temb, gtemb, cache.down[l]);
  }
  conv_bwd(a.in_conv, p, g, gh, cache.in_conv);

  for (int o = 0; o < a.embed; ++o) {
    const T v = cache.time_pre[o];
    const T s = sigmoid(v);
    const T gu = gtemb[o] * (s + v * s * (T(1) - s));
    g[a.time.b + o] += gu;
    for (int i = 0; i < a.embed; ++i) g[a.time.w + static_cast<std::size_t>(o) * a.embed + i] += gu * cache.embed[i];
  }
}

// Loss of one example and its gradient w.r.t. the network output.
template <class T>
double example_loss(const Tensor<T>& y, const FieldD& eps, LossKind kind, Tensor<T>* gy) {
  require(eps.size() == y.d.size(), Errc::dimension_mismatch, "denoiser: eps size differs from x_t");
  const double n = static_cast<double>(y.d.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < y.d.size(); ++i) {
    const double r = static_cast<double>(y.d[i]) - eps.values[i];
    if (kind == LossKind::mse) {
      loss += r * r;
      if (gy) gy->d[i] = static_cast<T>(2.0 * r / n);
    } else {
      loss += std::abs(r);
      if (gy) gy->d[i] = static_cast<T>(r > 0 ? 1.0 / n : (r < 0 ? -1.0 / n : 0.0));
    }
  }
  return loss / n;
}

template <class T>
LossAndGradient batch_backward(const Arch& a, const T* p, std::span<const TrainingExample> batch, LossKind kind,
                               bool want_grad) {
  require(!batch.empty(), Errc::invalid_argument, "denoiser: empty batch");
  const std::size_t B = batch.size();
  std::vector<double> losses(B, 0.0);
  std::vector<std::vector<T>> grads(want_grad ? B : 0);
  parallel_for(B, [&](std::size_t i) {
    const auto& ex = batch[i];
    NetCache<T> cache;
    const Tensor<T> x = input_tensor<T>(a, ex.x_t, ex.cond);
    const Tensor<T> y = net_fwd(a, p, x, ex.t, cache);
    if (!want_grad) {
      losses[i] = example_loss<T>(y, ex.eps, kind, nullptr);
      return;
    }
    Tensor<T> gy(1, y.h, y.w);
    losses[i] = example_loss<T>(y, ex.eps, kind, &gy);
    grads[i].assign(a.total, T(0));
    net_bwd(a, p, grads[i].data(), gy, cache);
  });
  LossAndGradient out;
  // Fixed summation order keeps the result independent of the worker count.
  for (double l : losses) out.loss += l;
  out.loss /= static_cast<double>(B);
  if (want_grad) {
    out.grad.assign(a.total, 0.0);
    for (const auto& g : grads)
      for (std::size_t k = 0; k < a.total; ++k) out.grad[k] += static_cast<double>(g[k]);
    for (auto& v : out.grad) v /= static_cast<double>(B);
  }
  return out;
}

}  // namespace

std::vector<ParamTensor> param_layout(const DenoiserSpec& spec) { return build_arch(spec).layout; }

std::size_t param_count(const DenoiserSpec& spec) { return build_arch(spec).total; }

DenoiserParams init_params(const DenoiserSpec& spec, std::uint64_t seed) {
  const Arch a = build_arch(spec);
  DenoiserParams params;
  params.values.assign(a.total, 0.0f);
  for (std::size_t k = 0; k < a.layout.size(); ++k) {
    const auto& t = a.layout[k];
    const std::string& n = t.name;
    auto ends_with = [&n](const std::string& suf) {
      return n.size() >= suf.size() && n.compare(n.size() - suf.size(), suf.size(), suf) == 0;
    };
    float* dst = params.values.data() + t.offset;
    if (ends_with(".gamma")) {
      std::fill(dst, dst + t.size(), 1.0f);
    } else if (ends_with(".weight") && n.rfind("out.conv", 0) != 0) {
      // He-style normal scaled by fan-in; conv2 of each block starts small so
      // blocks begin close to their skip path.
      std::size_t fan_in = 1;
      for (std::size_t d = 1; d < t.shape.size(); ++d) fan_in *= static_cast<std::size_t>(t.shape[d]);
      double std = std::sqrt(2.0 / static_cast<double>(fan_in));
      if (ends_with(".conv2.weight")) std *= 0.1;
      Rng rng(derive_seed(seed, k));
      for (std::size_t i = 0; i < t.size(); ++i) dst[i] = static_cast<float>(std * rng.normal());
    }
    // Biases, betas and the output convolution stay zero.
  }
  return params;
}

FeatureMap FeatureMap::crop(int x0, int y0, int w, int h) const {
  require(x0 >= 0 && y0 >= 0 && w >= 0 && h >= 0 && x0 + w <= width && y0 + h <= height, Errc::invalid_argument,
          "FeatureMap::crop: window outside the map");
  FeatureMap out(channels, h, w);
  for (int c = 0; c < channels; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.at(c, y, x) = at(c, y0 + y, x0 + x);
  return out;
}

FeatureMap build_conditioning(const StereoFrame& frame, const std::string& cond, const NormSpec& norm) {
  const int C = DenoiserSpec::cond_channels(cond);
  const int w = frame.width(), h = frame.height();
  FeatureMap out(C, h, w);
  if (C == 0) return out;
  int c = 0;
  auto put_image = [&](const ImageF32& img, int channel, const char* what) {
    require(!img.empty(), Errc::invalid_argument, std::string("conditioning: frame has no ") + what + " image");
    require(img.width == w && img.height == h, Errc::dimension_mismatch,
            std::string("conditioning: ") + what + " image size differs from left");
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.at(c, y, x) = 2.0f * img.at(x, y, channel) - 1.0f;
    ++c;
  };
  for (const auto& tok : split_tokens(cond, '+')) {
    if (tok == "left") {
      put_image(frame.left, 0, "left");
    } else if (tok == "right") {
      put_image(frame.right, 0, "right");
    } else if (tok == "color") {
      require(frame.color.has_value() && frame.color->channels == 3, Errc::invalid_argument,
              "conditioning: frame has no 3-channel color image");
      for (int k = 0; k < 3; ++k) put_image(*frame.color, k, "color");
    } else if (tok == "raw") {
      require(frame.raw.has_value(), Errc::invalid_argument, "conditioning: frame has no raw disparity");
      require(frame.raw->width == w && frame.raw->height == h, Errc::dimension_mismatch,
              "conditioning: raw disparity size differs from left");
      const auto n = normalize_disparity(*frame.raw, norm);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const std::size_t i = static_cast<std::size_t>(y) * w + x;
          out.at(c, y, x) = n.valid[i] ? static_cast<float>(n.x.values[i]) : 0.0f;
          out.at(c + 1, y, x) = n.valid[i] ? 1.0f : 0.0f;
        }
      c += 2;
    } else {
      token_channels(tok);
    }
  }
  return out;
}

std::vector<double> time_embedding(double t, int dim) {
  require(dim >= 2 && dim % 2 == 0, Errc::invalid_argument, "time_embedding: dim must be even");
  const int half = dim / 2;
  std::vector<double> e(dim);
  for (int i = 0; i < half; ++i) {
    const double w = std::pow(10000.0, -static_cast<double>(i) / half);
    e[2 * i] = std::sin(t * w);
    e[2 * i + 1] = std::cos(t * w);
  }
  return e;
}

FieldD denoiser_forward(const DenoiserParams& params, const DenoiserSpec& spec, const FieldD& x_t, int t,
                        const FeatureMap& cond) {
  const Arch a = build_arch(spec);
  require(params.values.size() == a.total, Errc::size_mismatch,
          "denoiser: parameter vector has " + std::to_string(params.values.size()) + " entries, spec needs " +
              std::to_string(a.total));
  NetCache<float> cache;
  const Tensor<float> y = net_fwd(a, params.values.data(), input_tensor<float>(a, x_t, cond), t, cache);
  FieldD out(x_t.width, x_t.height);
  for (std::size_t i = 0; i < out.size(); ++i) out.values[i] = y.d[i];
  return out;
}

std::string to_string(LossKind kind) { return kind == LossKind::mse ? "mse" : "l1"; }

LossKind loss_kind_from_string(const std::string& name) {
  if (name == "mse") return LossKind::mse;
  if (name == "l1") return LossKind::l1;
  fail(Errc::config_error, "unknown loss: " + name);
}

LossAndGradient denoiser_backward(const DenoiserParams& params, const DenoiserSpec& spec,
                                  std::span<const TrainingExample> batch, LossKind loss) {
  const Arch a = build_arch(spec);
  require(params.values.size() == a.total, Errc::size_mismatch, "denoiser: parameter count mismatch");
  auto out = batch_backward<float>(a, params.values.data(), batch, loss, true);
  if (!std::isfinite(out.loss)) fail(Errc::divergence, "training loss is not finite");
  return out;
}

LossAndGradient denoiser_backward_f64(std::span<const double> params, const DenoiserSpec& spec,
                                      std::span<const TrainingExample> batch, LossKind loss) {
  const Arch a = build_arch(spec);
  require(params.size() == a.total, Errc::size_mismatch, "denoiser: parameter count mismatch");
  return batch_backward<double>(a, params.data(), batch, loss, true);
}

double denoiser_loss_f64(std::span<const double> params, const DenoiserSpec& spec,
                         std::span<const TrainingExample> batch, LossKind loss) {
  const Arch a = build_arch(spec);
  require(params.size() == a.total, Errc::size_mismatch, "denoiser: parameter count mismatch");
  return batch_backward<double>(a, params.data(), batch, loss, false).loss;
}

// ---------------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------------

void TrainConfig::validate() const {
  require(epochs >= 1, Errc::config_error, "train.epochs must be >= 1");
  require(batch_size >= 1, Errc::config_error, "train.batch_size must be >= 1");
  require(learning_rate > 0.0 && std::isfinite(learning_rate), Errc::config_error,
          "train.learning_rate must be positive");
  require(crop_w >= 1 && crop_h >= 1, Errc::config_error, "train.crop must be positive");
  require(noise_levels >= 1, Errc::config_error, "train.noise_levels must be >= 1");
  require(rms_decay > 0.0 && rms_decay < 1.0, Errc::config_error, "train.rms_decay must be in (0, 1)");
  require(rms_eps > 0.0, Errc::config_error, "train.rms_eps must be positive");
}

TrainResult train(std::span<const TrainingPair> data, const DenoiserSpec& spec, const NoiseSchedule& sched,
                  const NormSpec& norm, const TrainConfig& cfg, const std::optional<TrainResult>& resume,
                  const EpochCallback& on_epoch) {
  cfg.validate();
  norm.validate();
  require(!data.empty(), Errc::invalid_argument, "train: no training data");
  const int div = 1 << spec.depth;
  require(cfg.crop_w % div == 0 && cfg.crop_h % div == 0, Errc::config_error,
          "train: crop size must be a multiple of " + std::to_string(div));

  std::vector<FeatureMap> conds;
  std::vector<FieldD> targets;
  for (const auto& pair : data) {
    require(pair.gt.width == pair.frame.width() && pair.gt.height == pair.frame.height(), Errc::dimension_mismatch,
            "train: ground truth size differs from the frame");
    require(pair.gt.width >= cfg.crop_w && pair.gt.height >= cfg.crop_h, Errc::config_error,
            "train: crop larger than a training image");
    conds.push_back(build_conditioning(pair.frame, spec.cond, norm));
    targets.push_back(normalize_disparity(pair.gt, norm).x);
  }

  TrainResult state;
  if (resume) {
    state = *resume;
    require(state.params.values.size() == param_count(spec), Errc::spec_mismatch,
            "train: resume state does not match the model spec");
  } else {
    state.params = init_params(spec, cfg.seed);
  }
  if (state.optimizer.mean_sq.size() != state.params.values.size())
    state.optimizer.mean_sq.assign(state.params.values.size(), 0.0f);

  const std::size_t n = data.size();
  for (int epoch = state.optimizer.epoch; epoch < cfg.epochs; ++epoch) {
    Rng rng(derive_seed(cfg.seed, 1'000'000ull + static_cast<std::uint64_t>(epoch)));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.uniform_int(0, static_cast<int>(i - 1))]);

    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t end = std::min(n, start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<TrainingExample> batch;
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t idx = order[k];
        const FieldD& x0_full = targets[idx];
        const int x0 = rng.uniform_int(0, x0_full.width - cfg.crop_w);
        const int y0 = rng.uniform_int(0, x0_full.height - cfg.crop_h);
        FieldD x0c(cfg.crop_w, cfg.crop_h);
        for (int y = 0; y < cfg.crop_h; ++y)
          for (int x = 0; x < cfg.crop_w; ++x) x0c.at(x, y) = x0_full.at(x0 + x, y0 + y);
        TrainingExample ex;
        ex.t = rng.uniform_int(1, sched.T);
        ex.eps = draw_noise(cfg.crop_w, cfg.crop_h, cfg.noise, cfg.noise_levels, rng);
        ex.x_t = forward_diffuse(x0c, ex.t, ex.eps, sched);
        ex.cond = conds[idx].crop(x0, y0, cfg.crop_w, cfg.crop_h);
        batch.push_back(std::move(ex));
      }
      LossAndGradient lg;
      try {
        lg = denoiser_backward(state.params, spec, batch, cfg.loss);
      } catch (const Error& e) {
        if (e.code() != Errc::divergence) throw;
        state.diverged = true;
        return state;
      }
      bool finite = true;
      for (double gv : lg.grad) finite = finite && std::isfinite(gv);
      if (!finite) {
        state.diverged = true;
        return state;
      }
      auto& ms = state.optimizer.mean_sq;
      auto& p = state.params.values;
      for (std::size_t k = 0; k < p.size(); ++k) {
        const double gk = lg.grad[k];
        const double m = cfg.rms_decay * ms[k] + (1.0 - cfg.rms_decay) * gk * gk;
        ms[k] = static_cast<float>(m);
        p[k] = static_cast<float>(p[k] - cfg.learning_rate * gk / (std::sqrt(m) + cfg.rms_eps));
      }
      epoch_loss += lg.loss * static_cast<double>(end - start);
    }
    const double mean_loss = epoch_loss / static_cast<double>(n);
    state.loss_curve.push_back(mean_loss);
    state.optimizer.epoch = epoch + 1;
    if (on_epoch) on_epoch(epoch, mean_loss);
  }
  return state;
}

// ---------------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'S', 'R', 'D', 'N'};

template <class U>
void write_le(std::ostream& os, U v) {
  static_assert(std::is_integral_v<U>);
  for (std::size_t i = 0; i < sizeof(U); ++i) os.put(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFF));
}

template <class U>
U read_le(std::istream& is) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    const int c = is.get();
    if (c == EOF) fail(Errc::truncated_file, "checkpoint: unexpected end of file");
    v |= static_cast<U>(static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i));
  }
  return v;
}

void write_floats(std::ostream& os, const std::vector<float>& v) {
  for (float f : v) write_le(os, std::bit_cast<std::uint32_t>(f));
}

std::vector<float> read_floats(std::istream& is, std::size_t n) {
  std::vector<float> v(n);
  for (auto& f : v) f = std::bit_cast<float>(read_le<std::uint32_t>(is));
  return v;
}

nlohmann::json spec_json(const DenoiserSpec& s) {
  return {{"cond", s.cond}, {"base_width", s.base_width}, {"depth", s.depth}, {"time_embed_dim", s.time_embed_dim}};
}

}  // namespace

void save_params(const Checkpoint& ckpt, const std::filesystem::path& path) {
  require(ckpt.params.values.size() == param_count(ckpt.spec), Errc::size_mismatch,
          "save_params: parameter count does not match the spec");
  nlohmann::json h;
  h["spec"] = spec_json(ckpt.spec);
  h["schedule"] = {{"kind", to_string(ckpt.schedule_kind)},
                   {"T", ckpt.schedule_T},
                   {"beta_start", ckpt.beta_start},
                   {"beta_end", ckpt.beta_end}};
  h["norm"] = {{"d_norm", ckpt.norm.d_norm}};
  h["param_count"] = ckpt.params.values.size();
  h["loss_curve"] = ckpt.loss_curve;
  h["notes"] = ckpt.notes;
  if (ckpt.optimizer) {
    require(ckpt.optimizer->mean_sq.size() == ckpt.params.values.size(), Errc::size_mismatch,
            "save_params: optimizer state size mismatch");
    h["optimizer"] = {{"kind", "rmsprop"}, {"epoch", ckpt.optimizer->epoch}};
  }
  const std::string header = h.dump();
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(Errc::io_failure, "cannot open " + path.string() + " for writing");
  os.write(kMagic, 4);
  write_le<std::uint32_t>(os, kCheckpointVersion);
  write_le<std::uint64_t>(os, header.size());
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
  write_floats(os, ckpt.params.values);
  if (ckpt.optimizer) write_floats(os, ckpt.optimizer->mean_sq);
  if (!os) fail(Errc::io_failure, "write failed: " + path.string());
}

Checkpoint load_params(const std::filesystem::path& path, const std::optional<DenoiserSpec>& expected) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(Errc::missing_file, "cannot open checkpoint " + path.string());
  char magic[4] = {};
  is.read(magic, 4);
  if (is.gcount() < 4) fail(Errc::truncated_file, "checkpoint: file too short: " + path.string());
  if (std::memcmp(magic, kMagic, 4) != 0) fail(Errc::bad_magic, "not a stereoroma checkpoint: " + path.string());
  const auto version = read_le<std::uint32_t>(is);
  if (version != kCheckpointVersion)
    fail(Errc::version_mismatch, "checkpoint version " + std::to_string(version) + ", expected " +
                                     std::to_string(kCheckpointVersion));
  const auto hlen = read_le<std::uint64_t>(is);
  if (hlen > (1u << 26)) fail(Errc::truncated_file, "checkpoint: implausible header length");
  std::string header(hlen, '\0');
  is.read(header.data(), static_cast<std::streamsize>(hlen));
  if (static_cast<std::uint64_t>(is.gcount()) < hlen) fail(Errc::truncated_file, "checkpoint: header truncated");

  Checkpoint ck;
  try {
    const auto h = nlohmann::json::parse(header);
    const auto& s = h.at("spec");
    ck.spec.cond = s.at("cond").get<std::string>();
    ck.spec.base_width = s.at("base_width").get<int>();
    ck.spec.depth = s.at("depth").get<int>();
    ck.spec.time_embed_dim = s.at("time_embed_dim").get<int>();
    const auto& sc = h.at("schedule");
    ck.schedule_kind = schedule_kind_from_string(sc.at("kind").get<std::string>());
    ck.schedule_T = sc.at("T").get<int>();
    ck.beta_start = sc.at("beta_start").get<double>();
    ck.beta_end = sc.at("beta_end").get<double>();
    ck.norm.d_norm = h.at("norm").at("d_norm").get<double>();
    ck.loss_curve = h.value("loss_curve", std::vector<double>{});
    ck.notes = h.value("notes", std::string{});
    const auto count = h.at("param_count").get<std::size_t>();
    if (count != param_count(ck.spec)) fail(Errc::size_mismatch, "checkpoint: parameter count disagrees with spec");
    if (expected && !(*expected == ck.spec))
      fail(Errc::spec_mismatch, "checkpoint model spec differs from the requested one");
    ck.params.values = read_floats(is, count);
    if (h.contains("optimizer")) {
      OptimizerState st;
      st.epoch = h["optimizer"].at("epoch").get<int>();
      st.mean_sq = read_floats(is, count);
      ck.optimizer = std::move(st);
    }
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::size_mismatch, std::string("checkpoint: malformed header: ") + e.what());
  }
  if (is.peek() != EOF) fail(Errc::size_mismatch, "checkpoint: trailing bytes after payload");
  return ck;
}

}  // namespace stereoroma
