#include "mec/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <random>

#include "mec/baselines.hpp"

namespace mec {

namespace {

double rel(double a, double b) { return std::abs(a - b) / std::max(1e-300, std::abs(b)); }

IdentityCheck make(std::string name, double dev, double tol) {
  return {std::move(name), dev, tol, dev <= tol, {}};
}

MecLossConfig exact_cfg(std::size_t m, std::size_t d) {
  MecLossConfig c;
  // lambda * m = 0.8 keeps det(I + C) positive for independent views.
  c.coding = CodingConfig(m, d, 1.25);
  c.exact = true;
  return c;
}

IdentityCheck check_dual_gap(int seeds) {
  const std::pair<std::size_t, std::size_t> shapes[] = {{8, 8}, {32, 8}, {8, 32}, {256, 64}};
  double worst = 0.0;
  for (const auto& [d, m] : shapes) {
    for (int s = 0; s < seeds; ++s) {
      std::mt19937_64 rng(1000 + static_cast<std::uint64_t>(s));
      const Matrix z1 = random_unit_columns(d, m, rng);
      const Matrix z2 = random_unit_columns(d, m, rng);
      worst = std::max(worst, dual_gap(z1, z2, exact_cfg(m, d)));
    }
  }
  return make("sylvester dual gap (batch vs feature)", worst, 1e-9);
}

std::vector<IdentityCheck> check_guard(int batches) {
  const double eps_d_sq = 1.25;
  double worst_holder = 0.0;
  double worst_power = 0.0;
  double worst_excess = -1e300;
  double bound = 0.0;
  std::mt19937_64 rng(2024);
  for (int b = 0; b < batches; ++b) {
    const std::size_t d = b % 2 == 0 ? 32 : 128;
    const std::size_t m = b % 2 == 0 ? 64 : 32;
    const CodingConfig coding(m, d, eps_d_sq);
    bound = coding.holder_worst_case();
    const Matrix z1 = random_unit_columns(d, m, rng);
    const Matrix z2 = random_unit_columns(d, m, rng);
    Matrix c = gram(z1, z2, Side::Batch);
    c *= coding.lambda();
    const SpectralBound sb = spectral_bound(c);
    worst_holder = std::max(worst_holder, sb.holder_bound);
    worst_power = std::max(worst_power, sb.power_iter_estimate);
    worst_excess = std::max(worst_excess, sb.power_iter_estimate - sb.holder_bound);
  }
  std::vector<IdentityCheck> out;
  IdentityCheck h = make("hoelder bound <= lambda*m (eps_d_sq=1.25)", worst_holder, bound);
  char note[160];
  std::snprintf(note, sizeof note, "max ||C||_2 = %.6f, max hoelder = %.6f, lambda*m = %.6f",
                worst_power, worst_holder, bound);
  h.note = note;
  out.push_back(h);
  out.push_back(make("power-iteration ||C||_2 < 1 (eps_d_sq=1.25)", worst_power, 1.0 - 1e-12));
  out.push_back(make("power estimate <= hoelder bound", std::max(0.0, worst_excess), 1e-9));
  return out;
}

std::vector<IdentityCheck> check_first_order(int seeds, bool corrupt) {
  const std::size_t d = 32;
  const std::size_t m = 24;
  std::vector<double> coeffs = taylor_coefficients(1);
  if (corrupt) coeffs[0] *= 1.001;
  double worst_series = 0.0;
  double worst_loss = 0.0;
  for (int s = 0; s < seeds; ++s) {
    std::mt19937_64 rng(3000 + static_cast<std::uint64_t>(s));
    const Matrix z1 = random_unit_columns(d, m, rng);
    const Matrix z2 = random_unit_columns(d, m, rng);
    const CodingConfig coding(m, d, 0.5, 1);
    const double mu = coding.mu();
    const double lambda = coding.lambda();
    const double reference = mu * lambda * simsiam_loss(z1, z2).value;

    Matrix c = gram(z1, z2, Side::Batch);
    c *= lambda;
    worst_series = std::max(worst_series, rel(-mu * trace_series(c, coeffs), reference));

    MecLossConfig cfg;
    cfg.coding = coding;
    cfg.normalize_by_mu = false;
    worst_loss = std::max(worst_loss, rel(mec_loss(z1, z2, cfg).value, reference));
  }
  return {make("first order: -mu Tr(C) = mu*lambda*simsiam", worst_series, 1e-12),
          make("first order: mec_loss(n=1) = mu*lambda*simsiam", worst_loss, 1e-12)};
}

std::vector<IdentityCheck> check_second_order(int seeds) {
  const std::size_t d = 32;
  const std::size_t m = 24;
  double worst_cross = 0.0;
  double worst_sym = 0.0;
  for (int s = 0; s < seeds; ++s) {
    std::mt19937_64 rng(4000 + static_cast<std::uint64_t>(s));
    const Matrix z1 = random_unit_columns(d, m, rng);
    const Matrix z2 = random_unit_columns(d, m, rng);
    MecLossConfig cfg;
    cfg.coding = CodingConfig(m, d, 0.5, 2);
    cfg.form = Form::Feature;
    cfg.normalize_by_mu = false;
    const double mu = cfg.coding.mu();

    Matrix c = gram(z1, z2, Side::Feature);
    c *= cfg.coding.lambda();
    const SecondOrderTerms t = second_order_terms(c, mu);
    worst_cross = std::max(worst_cross, rel(t.diagonal + t.off_diagonal_cross, mec_loss(z1, z2, cfg).value));

    Matrix cs = gram(z1, z1, Side::Feature);
    cs *= cfg.coding.lambda();
    const SecondOrderTerms ts = second_order_terms(cs, mu);
    worst_sym = std::max(worst_sym, rel(ts.diagonal + ts.off_diagonal_squared, mec_loss(z1, z1, cfg).value));
  }
  return {make("second order, shared view: diag + (mu/2) sum C_ij^2", worst_sym, 1e-10),
          make("second order, two views: diag + (mu/2) sum C_ij C_ji", worst_cross, 1e-10)};
}

std::vector<IdentityCheck> check_gradients() {
  const std::size_t d = 16;
  const std::size_t m = 12;
  std::mt19937_64 rng(5000);
  const Matrix z1 = random_unit_columns(d, m, rng);
  const Matrix z2 = random_unit_columns(d, m, rng);
  std::vector<IdentityCheck> out;

  auto mec_cfg = [&](bool exact, int order, Form form) {
    MecLossConfig c;
    c.coding = CodingConfig(m, d, 0.5, order);
    c.exact = exact;
    c.form = form;
    return c;
  };
  for (Form form : {Form::Batch, Form::Feature}) {
    const std::string side = form == Form::Batch ? "batch" : "feature";
    out.push_back(make("gradcheck mec exact " + side,
                       mec_gradcheck(z1, z2, mec_cfg(true, 4, form)), 1e-4));
    for (int order : {1, 2, 4}) {
      out.push_back(make("gradcheck mec n=" + std::to_string(order) + " " + side,
                         mec_gradcheck(z1, z2, mec_cfg(false, order, form)), 1e-4));
    }
  }
  out.push_back(make("gradcheck simsiam", gradcheck(simsiam_loss, z1, z2), 1e-4));
  for (BarlowNorm norm : {BarlowNorm::L2, BarlowNorm::BatchNorm}) {
    BaselineConfig bc;
    bc.kind = BaselineKind::Barlow;
    bc.normalization = norm;
    out.push_back(make(std::string("gradcheck barlow ") + (norm == BarlowNorm::L2 ? "l2" : "batchnorm"),
                       gradcheck([&](const Matrix& a, const Matrix& b) { return barlow_loss(a, b, bc); }, z1, z2),
                       1e-4));
  }
  BaselineConfig nce;
  nce.kind = BaselineKind::InfoNce;
  nce.temperature = 0.5;
  out.push_back(make("gradcheck infonce",
                     gradcheck([&](const Matrix& a, const Matrix& b) { return infonce_loss(a, b, nce); }, z1, z2),
                     1e-4));
  CompositeConfig comp{BaselineConfig{}, mec_cfg(false, 4, Form::Auto), 0.5};
  out.push_back(make("gradcheck composite simsiam+mec",
                     gradcheck([&](const Matrix& a, const Matrix& b) { return composite_loss(a, b, comp); }, z1, z2),
                     1e-4));
  return out;
}

}  // namespace

std::vector<IdentityCheck> run_verify(const VerifyOptions& opts) {
  std::vector<IdentityCheck> out;
  out.push_back(check_dual_gap(std::max(1, opts.seeds / 2)));
  for (auto& c : check_guard(opts.guard_batches)) out.push_back(std::move(c));
  for (auto& c : check_first_order(opts.seeds, opts.corrupt_taylor_coefficient)) out.push_back(std::move(c));
  for (auto& c : check_second_order(opts.seeds)) out.push_back(std::move(c));
  for (auto& c : check_gradients()) out.push_back(std::move(c));
  return out;
}

void print_verify_table(const std::vector<IdentityCheck>& checks, std::ostream& out) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-56s %14s %12s  %s\n", "identity", "max_deviation", "tolerance",
                "result");
  out << buf;
  for (const IdentityCheck& c : checks) {
    std::snprintf(buf, sizeof buf, "%-56s %14.3e %12.3e  %s\n", c.name.c_str(), c.max_deviation,
                  c.tolerance, c.pass ? "PASS" : "FAIL");
    out << buf;
    if (!c.note.empty()) out << "    " << c.note << '\n';
  }
}

bool all_pass(const std::vector<IdentityCheck>& checks) {
  return std::all_of(checks.begin(), checks.end(), [](const IdentityCheck& c) { return c.pass; });
}

}  // namespace mec
