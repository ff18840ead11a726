#include "echl/calibrate.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

namespace echl {

namespace {

double softplus_stable(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

double sigmoid_stable(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Minimizes f over [lo, hi] to within tol on the argument.
double golden_min(const std::function<double(double)>& f, double lo, double hi, double tol) {
  const double phi = 0.6180339887498949;
  double a = lo;
  double b = hi;
  double c = b - phi * (b - a);
  double d = a + phi * (b - a);
  double fc = f(c);
  double fd = f(d);
  while (b - a > tol) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + phi * (b - a);
      fd = f(d);
    }
  }
  return 0.5 * (a + b);
}

double nll_pair(double z, std::uint8_t y, double inv_t) {
  const double sign = y ? 1.0 : -1.0;
  return softplus_stable(-sign * z * inv_t);
}

// Mean NLL over one label column at the given temperature.
double column_nll(const EvalTable& t, std::size_t col, double temperature) {
  const double inv_t = 1.0 / temperature;
  double sum = 0.0;
  for (std::size_t i = 0; i < t.n; ++i) sum += nll_pair(t.score(i, col), t.label(i, col), inv_t);
  return sum / static_cast<double>(t.n);
}

constexpr double kLogTLo = -4.0;
constexpr double kLogTHi = 4.0;
constexpr double kLogTTol = 1e-8;

}  // namespace

const char* to_string(CalibrationModel::Mode m) {
  switch (m) {
    case CalibrationModel::Mode::global: return "global";
    case CalibrationModel::Mode::per_label: return "per_label";
  }
  return "?";
}

CalibrationModel::Mode calib_mode_from_string(const std::string& s) {
  if (s == "global") return CalibrationModel::Mode::global;
  if (s == "per_label" || s == "per-label") return CalibrationModel::Mode::per_label;
  throw usage_error("unknown calibration mode: " + s);
}

double mean_nll(const EvalTable& logits, double temperature) {
  const std::vector<double> temps(logits.k, temperature);
  return mean_nll(logits, temps);
}

double mean_nll(const EvalTable& logits, std::span<const double> temps) {
  logits.validate();
  if (temps.size() != logits.k) throw validation_error("mean_nll: one temperature per label");
  if (logits.n == 0 || logits.k == 0) return 0.0;
  double sum = 0.0;
  for (std::size_t j = 0; j < logits.k; ++j) {
    const double inv_t = 1.0 / temps[j];
    for (std::size_t i = 0; i < logits.n; ++i) {
      sum += nll_pair(logits.score(i, j), logits.label(i, j), inv_t);
    }
  }
  return sum / static_cast<double>(logits.n * logits.k);
}

CalibrationModel fit_temperature(const EvalTable& val_logits, CalibrationModel::Mode mode,
                                 double l2) {
  val_logits.validate();
  if (val_logits.n == 0 || val_logits.k == 0) {
    throw validation_error("fit_temperature: empty validation table");
  }
  if (l2 < 0.0) throw usage_error("fit_temperature: l2 must be >= 0");

  CalibrationModel cal;
  cal.mode = mode;
  cal.l2 = l2;

  const auto global_nll = [&](double log_t) { return mean_nll(val_logits, std::exp(log_t)); };
  const double t_hat = std::exp(golden_min(global_nll, kLogTLo, kLogTHi, kLogTTol));
  // Keep T = 1 when the search cannot beat it, so fitting never hurts NLL.
  cal.t_global = mean_nll(val_logits, t_hat) < mean_nll(val_logits, 1.0) ? t_hat : 1.0;
  cal.temps.assign(val_logits.k, cal.t_global);
  if (mode == CalibrationModel::Mode::global) return cal;

  const double reg_weight = l2 / static_cast<double>(val_logits.n);
  for (std::size_t j = 0; j < val_logits.k; ++j) {
    bool has_pos = false;
    bool has_neg = false;
    for (std::size_t i = 0; i < val_logits.n; ++i) {
      (val_logits.label(i, j) ? has_pos : has_neg) = true;
    }
    if (!has_pos || !has_neg) continue;  // NLL direction degenerate; keep t_global

    const auto objective = [&](double temp) {
      const double d = temp - cal.t_global;
      return column_nll(val_logits, j, temp) + reg_weight * d * d;
    };
    const double tj = std::exp(
        golden_min([&](double log_t) { return objective(std::exp(log_t)); }, kLogTLo, kLogTHi,
                   kLogTTol));
    // Only move off t_global when it strictly improves the regularized
    // objective; keeps per-label NLL <= NLL at t_global, label by label.
    if (objective(tj) < objective(cal.t_global)) cal.temps[j] = tj;
  }
  return cal;
}

EvalTable apply_temperature(const EvalTable& logits, const CalibrationModel& cal) {
  logits.validate();
  if (cal.temps.size() != logits.k) {
    throw validation_error("apply_temperature: model fitted for a different label count");
  }
  EvalTable out = logits;
  for (std::size_t j = 0; j < logits.k; ++j) {
    if (!(cal.temps[j] > 0.0)) throw validation_error("apply_temperature: temperature <= 0");
    const double inv_t = 1.0 / cal.temps[j];
    for (std::size_t i = 0; i < logits.n; ++i) {
      out.scores[i * out.k + j] = sigmoid_stable(logits.score(i, j) * inv_t);
    }
  }
  out.is_probability = true;
  return out;
}

void fit_thresholds(CalibrationModel& cal, const EvalTable& val_probs, double beta) {
  val_probs.validate();
  if (beta <= 0.0) throw usage_error("fit_thresholds: beta must be positive");
  for (double p : val_probs.scores) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw validation_error("fit_thresholds requires probabilities in [0,1]");
    }
  }
  cal.beta = beta;
  cal.thresholds.assign(val_probs.k, 0.5);

  std::vector<std::pair<double, std::uint8_t>> col(val_probs.n);
  for (std::size_t j = 0; j < val_probs.k; ++j) {
    std::size_t total_pos = 0;
    for (std::size_t i = 0; i < val_probs.n; ++i) {
      col[i] = {val_probs.score(i, j), val_probs.label(i, j)};
      total_pos += col[i].second;
    }
    if (total_pos == 0) continue;  // documented fallback: tau = 0.5

    std::sort(col.begin(), col.end());
    // suffix_pos[i] = positives among col[i..n)
    std::vector<std::size_t> suffix_pos(val_probs.n + 1, 0);
    for (std::size_t i = val_probs.n; i-- > 0;) {
      suffix_pos[i] = suffix_pos[i + 1] + col[i].second;
    }
    const auto fbeta_at_index = [&](std::size_t first) {
      const std::size_t tp = suffix_pos[first];
      const std::size_t fp = (val_probs.n - first) - tp;
      const std::size_t fn = total_pos - tp;
      return f_beta(tp, fp, fn, beta);
    };
    const auto first_at_least = [&](double tau) {
      return static_cast<std::size_t>(
          std::lower_bound(col.begin(), col.end(), std::pair<double, std::uint8_t>{tau, 0}) -
          col.begin());
    };

    // Candidates: each distinct probability ascending, then the 0.5 sentinel.
    // Strict improvement keeps the lowest maximizer and lets the sentinel win
    // only outright.
    double best_tau = 0.0;
    double best_f = -1.0;
    for (std::size_t i = 0; i < val_probs.n; ++i) {
      if (i > 0 && col[i].first == col[i - 1].first) continue;
      const double f = fbeta_at_index(i);
      if (f > best_f) {
        best_f = f;
        best_tau = col[i].first;
      }
    }
    const double f_sentinel = fbeta_at_index(first_at_least(0.5));
    if (f_sentinel > best_f) {
      best_f = f_sentinel;
      best_tau = 0.5;
    }
    cal.thresholds[j] = best_tau;
  }
}

std::vector<std::uint8_t> decide(const EvalTable& probs, const CalibrationModel& cal) {
  probs.validate();
  if (cal.thresholds.size() != probs.k) {
    throw validation_error("decide: thresholds not fitted for this label count");
  }
  std::vector<std::uint8_t> out(probs.n * probs.k, 0);
  for (std::size_t i = 0; i < probs.n; ++i) {
    for (std::size_t j = 0; j < probs.k; ++j) {
      out[i * probs.k + j] = probs.score(i, j) >= cal.thresholds[j] ? 1 : 0;
    }
  }
  return out;
}

nlohmann::json calibration_to_json(const CalibrationModel& cal) {
  nlohmann::json doc;
  doc["mode"] = to_string(cal.mode);
  doc["t_global"] = cal.t_global;
  doc["temps"] = cal.temps;
  doc["thresholds"] = cal.thresholds;
  doc["beta"] = cal.beta;
  doc["l2"] = cal.l2;
  doc["bins"] = cal.bins;
  return doc;
}

CalibrationModel calibration_from_json(const nlohmann::json& doc) {
  CalibrationModel cal;
  cal.mode = calib_mode_from_string(doc.at("mode").get<std::string>());
  cal.t_global = doc.at("t_global").get<double>();
  cal.temps = doc.at("temps").get<std::vector<double>>();
  cal.thresholds = doc.at("thresholds").get<std::vector<double>>();
  cal.beta = doc.at("beta").get<double>();
  cal.l2 = doc.at("l2").get<double>();
  cal.bins = doc.at("bins").get<std::size_t>();
  return cal;
}

}  // namespace echl
