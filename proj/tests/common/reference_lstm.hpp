#pragma once

// Plain peephole LSTM written independently of the library: nested vectors,
// no spans, no shared kernels. Used as an oracle for the forward pass and for
// fully observed backpropagation.

#include <cmath>
#include <cstddef>
#include <vector>

namespace reference {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;  // rows

struct Params {
  Mat Wf, Wi, Wc, Wo, Uf, Ui, Uc, Uo;
  Vec Vf, Vi, Vo, bf, bi, bc, bo;
};

inline Mat zeros(std::size_t r, std::size_t c) { return Mat(r, Vec(c, 0.0)); }

inline Params zero_params(std::size_t N, std::size_t M) {
  Params p;
  for (Mat* w : {&p.Wf, &p.Wi, &p.Wc, &p.Wo}) *w = zeros(M, N);
  for (Mat* u : {&p.Uf, &p.Ui, &p.Uc, &p.Uo}) *u = zeros(M, M);
  for (Vec* v : {&p.Vf, &p.Vi, &p.Vo, &p.bf, &p.bi, &p.bc, &p.bo}) *v = Vec(M, 0.0);
  return p;
}

inline double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline Vec affine(const Mat& W, const Vec& x, const Mat& U, const Vec& h, const Vec& b) {
  Vec out = b;
  for (std::size_t r = 0; r < out.size(); ++r) {
    for (std::size_t c = 0; c < x.size(); ++c) out[r] += W[r][c] * x[c];
    for (std::size_t c = 0; c < h.size(); ++c) out[r] += U[r][c] * h[c];
  }
  return out;
}

struct Step {
  Vec x, h_prev, c_prev, f, i, z, o, c, h;
};

// xs[t] is the (already zero-filled) input at step t.
inline std::vector<Step> forward(const Params& p, const std::vector<Vec>& xs, bool peepholes = true) {
  const std::size_t M = p.bf.size();
  std::vector<Step> steps;
  Vec h(M, 0.0), c(M, 0.0);
  for (const Vec& x : xs) {
    Step s;
    s.x = x;
    s.h_prev = h;
    s.c_prev = c;
    s.f = affine(p.Wf, x, p.Uf, h, p.bf);
    s.i = affine(p.Wi, x, p.Ui, h, p.bi);
    s.z = affine(p.Wc, x, p.Uc, h, p.bc);
    s.o = affine(p.Wo, x, p.Uo, h, p.bo);
    s.c = Vec(M);
    s.h = Vec(M);
    for (std::size_t m = 0; m < M; ++m) {
      if (peepholes) {
        s.f[m] += p.Vf[m] * c[m];
        s.i[m] += p.Vi[m] * c[m];
      }
      s.c[m] = sig(s.f[m]) * c[m] + sig(s.i[m]) * std::tanh(s.z[m]);
      if (peepholes) s.o[m] += p.Vo[m] * s.c[m];
      s.h[m] = sig(s.o[m]) * std::tanh(s.c[m]);
    }
    h = s.h;
    c = s.c;
    steps.push_back(s);
  }
  return steps;
}

// Standard BPTT of L = sum_m 1/(2JT) sum_{j,t} (h - s)^2 for fully observed
// sequences. targets[j][t] has M entries.
inline Params backward(const Params& p, const std::vector<std::vector<Vec>>& inputs,
                       const std::vector<std::vector<Vec>>& targets) {
  const std::size_t J = inputs.size();
  const std::size_t T = inputs.empty() ? 0 : inputs[0].size();
  const std::size_t N = p.Wf.empty() ? 0 : p.Wf[0].size();
  const std::size_t M = p.bf.size();
  Params g = zero_params(N, M);
  const double scale = 1.0 / static_cast<double>(J * T);

  for (std::size_t j = 0; j < J; ++j) {
    const auto steps = forward(p, inputs[j]);
    Vec dh_carry(M, 0.0), dc_carry(M, 0.0);
    for (std::size_t tt = T; tt-- > 0;) {
      const Step& s = steps[tt];
      Vec df(M), di(M), dz(M), d_o(M), dc(M);
      for (std::size_t m = 0; m < M; ++m) {
        const double dh = scale * (s.h[m] - targets[j][tt][m]) + dh_carry[m];
        const double so = sig(s.o[m]), tc = std::tanh(s.c[m]);
        d_o[m] = dh * tc * so * (1 - so);
        dc[m] = dh * so * (1 - tc * tc) + d_o[m] * p.Vo[m] + dc_carry[m];
        const double si = sig(s.i[m]), sf = sig(s.f[m]), tz = std::tanh(s.z[m]);
        di[m] = dc[m] * tz * si * (1 - si);
        df[m] = dc[m] * s.c_prev[m] * sf * (1 - sf);
        dz[m] = dc[m] * si * (1 - tz * tz);
      }
      auto acc = [&](Mat& dW, Mat& dU, Vec& db, const Vec& d) {
        for (std::size_t r = 0; r < M; ++r) {
          for (std::size_t c = 0; c < N; ++c) dW[r][c] += d[r] * s.x[c];
          for (std::size_t c = 0; c < M; ++c) dU[r][c] += d[r] * s.h_prev[c];
          db[r] += d[r];
        }
      };
      acc(g.Wf, g.Uf, g.bf, df);
      acc(g.Wi, g.Ui, g.bi, di);
      acc(g.Wc, g.Uc, g.bc, dz);
      acc(g.Wo, g.Uo, g.bo, d_o);
      for (std::size_t m = 0; m < M; ++m) {
        g.Vf[m] += df[m] * s.c_prev[m];
        g.Vi[m] += di[m] * s.c_prev[m];
        g.Vo[m] += d_o[m] * s.c[m];
      }
      for (std::size_t m = 0; m < M; ++m) {
        dh_carry[m] = 0.0;
        for (std::size_t r = 0; r < M; ++r) {
          dh_carry[m] += p.Uf[r][m] * df[r] + p.Ui[r][m] * di[r] + p.Uc[r][m] * dz[r] + p.Uo[r][m] * d_o[r];
        }
        dc_carry[m] = dc[m] * sig(s.f[m]) + df[m] * p.Vf[m] + di[m] * p.Vi[m];
      }
    }
  }
  return g;
}

}  // namespace reference
