#pragma once

#include <cmath>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "hvat/tensor.hpp"

namespace hvat {

/// Worst observed disagreement between reverse-mode and central-difference
/// gradients across every element of every checked parameter.
struct GradCheckReport {
    double max_rel_err = 0.0;
    size_t param_index = 0;
    size_t flat_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
};

namespace detail {

inline void validate_step(double h) {
    if (!(h >= 1e-6 && h <= 1e-3)) {
        throw ConfigError("grad_check: step h=" + std::to_string(h) +
                          " outside [1e-6, 1e-3]; central differences are unreliable there");
    }
}

}  // namespace detail

/// Compares reverse-mode gradients of the scalar f() against central
/// differences for every element of `params`. f is re-evaluated after each
/// in-place perturbation, so it must read the current parameter values.
/// Relative error uses max(|analytic|, |numeric|, 1e-8) in the denominator.
inline GradCheckReport grad_check(const std::function<Tensor<double>()>& f,
                                  std::vector<Tensor<double>> params, double h) {
    detail::validate_step(h);
    if (params.empty()) throw ContractError("grad_check: no parameters given");
    for (auto& p : params) p.set_requires_grad(true);

    for (auto& p : params) p.zero_grad();
    Tensor<double> loss = f();
    if (loss.size() != 1) {
        throw ContractError("grad_check: objective must be scalar, got shape " +
                            format_shape(loss.shape()));
    }
    backward(loss);
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (auto& p : params) analytic.push_back(p.grad());

    GradCheckReport report;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Tensor<double>& p = params[pi];
        for (size_t i = 0; i < p.size(); ++i) {
            const double saved = p.data()[i];
            p.data()[i] = saved + h;
            const double up = f().scalar_value();
            p.data()[i] = saved - h;
            const double down = f().scalar_value();
            p.data()[i] = saved;  // exact restore
            const double numeric = (up - down) / (2.0 * h);
            const double a = analytic[pi][i];
            const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
            const double rel = std::fabs(a - numeric) / denom;
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.param_index = pi;
                report.flat_index = i;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    return report;
}

/// Single-tensor convenience: f maps the checked tensor to a scalar.
inline GradCheckReport grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                                  const Tensor<double>& x, double h) {
    Tensor<double> p = x;
    return grad_check([f, p]() { return f(p); }, std::vector<Tensor<double>>{p}, h);
}

/// Fixed random projection to a scalar. Plain sums have zero gradient through
/// shift-invariant ops like softmax, so every check reduces with this instead.
inline Tensor<double> weighted_sum(const Tensor<double>& t, Rng& rng) {
    Tensor<double> w = Tensor<double>::zeros(t.shape());
    w.fill_uniform(rng, 0.25, 1.75);
    return sum_all(mul(t, w));
}

struct GradCheckCase {
    std::string name;
    std::function<GradCheckReport(double h)> run;
};

/// One case per differentiable op, each exercising the backward rule through
/// a fixed random projection. Inputs are seeded, so runs are reproducible.
inline std::vector<GradCheckCase> builtin_gradcheck_cases() {
    using T = Tensor<double>;
    std::vector<GradCheckCase> cases;
    auto make_input = [](std::vector<size_t> shape, uint64_t seed) {
        Rng rng(seed);
        T t = T::zeros(std::move(shape));
        t.fill_uniform(rng, -1.0, 1.0);
        return t;
    };

    cases.push_back({"matmul", [make_input](double h) {
        T a = make_input({2, 3}, 11);
        T b = make_input({3, 4}, 12);
        return grad_check([a, b]() {
            Rng r(13);
            return weighted_sum(matmul(a, b), r);
        }, {a, b}, h);
    }});
    cases.push_back({"matmul_batched", [make_input](double h) {
        T a = make_input({2, 3, 4}, 21);
        T b = make_input({4, 2}, 22);
        return grad_check([a, b]() {
            Rng r(23);
            return weighted_sum(matmul(a, b), r);
        }, {a, b}, h);
    }});
    cases.push_back({"transpose", [make_input](double h) {
        T x = make_input({3, 5}, 31);
        return grad_check([x]() {
            Rng r(32);
            return weighted_sum(transpose(x), r);
        }, {x}, h);
    }});
    cases.push_back({"add", [make_input](double h) {
        T a = make_input({4, 3}, 41);
        T b = make_input({4, 3}, 42);
        return grad_check([a, b]() {
            Rng r(43);
            return weighted_sum(add(a, b), r);
        }, {a, b}, h);
    }});
    cases.push_back({"add_row_broadcast", [make_input](double h) {
        T a = make_input({4, 3}, 44);
        T b = make_input({3}, 45);
        return grad_check([a, b]() {
            Rng r(46);
            return weighted_sum(add(a, b), r);
        }, {a, b}, h);
    }});
    cases.push_back({"add_scalar_broadcast", [make_input](double h) {
        T a = make_input({4, 3}, 47);
        T b = make_input({1}, 48);
        return grad_check([a, b]() {
            Rng r(49);
            return weighted_sum(add(a, b), r);
        }, {a, b}, h);
    }});
    cases.push_back({"mul", [make_input](double h) {
        T a = make_input({4, 3}, 51);
        T b = make_input({4, 3}, 52);
        return grad_check([a, b]() {
            Rng r(53);
            return weighted_sum(mul(a, b), r);
        }, {a, b}, h);
    }});
    cases.push_back({"mul_row_broadcast", [make_input](double h) {
        T a = make_input({4, 3}, 54);
        T b = make_input({3}, 55);
        return grad_check([a, b]() {
            Rng r(56);
            return weighted_sum(mul(a, b), r);
        }, {a, b}, h);
    }});
    cases.push_back({"mul_scalar_broadcast", [make_input](double h) {
        T a = make_input({4, 3}, 57);
        T b = make_input({1}, 58);
        return grad_check([a, b]() {
            Rng r(59);
            return weighted_sum(mul(a, b), r);
        }, {a, b}, h);
    }});
    cases.push_back({"scale", [make_input](double h) {
        T x = make_input({3, 3}, 61);
        return grad_check([x]() {
            Rng r(62);
            return weighted_sum(scale(x, 0.37), r);
        }, {x}, h);
    }});
    cases.push_back({"relu", [](double h) {
        // keep inputs clear of the kink so the finite difference never straddles it
        Rng rng(71);
        T x = T::zeros({4, 4});
        for (size_t i = 0; i < x.size(); ++i) {
            const double mag = rng.uniform(0.1, 1.0);
            x.data()[i] = rng.uniform() < 0.5 ? -mag : mag;
        }
        return grad_check([x]() {
            Rng r(72);
            return weighted_sum(relu(x), r);
        }, {x}, h);
    }});
    cases.push_back({"sigmoid", [make_input](double h) {
        T x = make_input({3, 4}, 81);
        return grad_check([x]() {
            Rng r(82);
            return weighted_sum(sigmoid(x), r);
        }, {x}, h);
    }});
    cases.push_back({"softmax_rows", [make_input](double h) {
        T x = make_input({3, 5}, 91);
        return grad_check([x]() {
            Rng r(92);
            return weighted_sum(softmax(x, 1), r);
        }, {x}, h);
    }});
    cases.push_back({"softmax_cols", [make_input](double h) {
        T x = make_input({3, 5}, 93);
        return grad_check([x]() {
            Rng r(94);
            return weighted_sum(softmax(x, 0), r);
        }, {x}, h);
    }});
    cases.push_back({"log_softmax", [make_input](double h) {
        T x = make_input({3, 5}, 95);
        return grad_check([x]() {
            Rng r(96);
            return weighted_sum(log_softmax(x, 1), r);
        }, {x}, h);
    }});
    cases.push_back({"concat_rows", [make_input](double h) {
        T a = make_input({2, 3}, 101);
        T b = make_input({3, 3}, 102);
        return grad_check([a, b]() {
            Rng r(103);
            return weighted_sum(concat<double>({a, b}, 0), r);
        }, {a, b}, h);
    }});
    cases.push_back({"concat_cols", [make_input](double h) {
        T a = make_input({3, 2}, 104);
        T b = make_input({3, 4}, 105);
        return grad_check([a, b]() {
            Rng r(106);
            return weighted_sum(concat<double>({a, b}, 1), r);
        }, {a, b}, h);
    }});
    cases.push_back({"slice", [make_input](double h) {
        T x = make_input({4, 6}, 111);
        return grad_check([x]() {
            Rng r(112);
            return weighted_sum(slice(x, 1, 2, 3), r);
        }, {x}, h);
    }});
    cases.push_back({"mean_rows", [make_input](double h) {
        T x = make_input({4, 3}, 121);
        return grad_check([x]() {
            Rng r(122);
            return weighted_sum(mean(x, 0), r);
        }, {x}, h);
    }});
    cases.push_back({"mean_cols", [make_input](double h) {
        T x = make_input({4, 3}, 123);
        return grad_check([x]() {
            Rng r(124);
            return weighted_sum(mean(x, 1), r);
        }, {x}, h);
    }});
    cases.push_back({"sum_all", [make_input](double h) {
        T x = make_input({3, 4}, 131);
        return grad_check([x]() { return sum_all(x); }, {x}, h);
    }});
    cases.push_back({"reshape", [make_input](double h) {
        T x = make_input({3, 4}, 141);
        return grad_check([x]() {
            Rng r(142);
            return weighted_sum(reshape(x, {2, 6}), r);
        }, {x}, h);
    }});
    cases.push_back({"layer_norm", [make_input](double h) {
        T x = make_input({3, 6}, 151);
        T g = make_input({6}, 152);
        T b = make_input({6}, 153);
        return grad_check([x, g, b]() {
            Rng r(154);
            return weighted_sum(layer_norm(x, g, b, 1e-5), r);
        }, {x, g, b}, h);
    }});
    cases.push_back({"embedding_rows", [make_input](double h) {
        T table = make_input({5, 4}, 161);
        const std::vector<int32_t> ids = {3, 0, 3, 2};  // repeat tests scatter accumulation
        return grad_check([table, ids]() {
            Rng r(162);
            return weighted_sum(embedding_rows(table, ids), r);
        }, {table}, h);
    }});
    return cases;
}

/// Negative-control fixture: a square op whose backward deliberately drops
/// the factor 2 (dx = g*x instead of 2*g*x), so the checker must flag it.
/// Exists to prove the harness can fail; never part of the default suite.
inline GradCheckCase broken_backward_case() {
    return {"broken_backward_fixture", [](double h) {
        auto broken_square = [](const Tensor<double>& x) {
            auto node = detail::make_op_node<double>(x.shape(), {x.node()}, "broken_square");
            for (size_t i = 0; i < x.size(); ++i) node->value[i] = x.data()[i] * x.data()[i];
            auto xn = x.node();
            node->backward = [xn](detail::Node<double>& self) {
                xn->ensure_grad();
                for (size_t i = 0; i < self.size(); ++i) {
                    xn->grad[i] += self.grad[i] * xn->value[i];  // missing the factor 2
                }
            };
            return Tensor<double>(std::move(node));
        };
        Rng rng(171);
        Tensor<double> x = Tensor<double>::zeros({3, 3});
        x.fill_uniform(rng, 0.5, 1.5);
        return grad_check([&broken_square, x]() { return sum_all(broken_square(x)); }, {x}, h);
    }};
}

/// Runs cases, printing one line each, and reports the worst error seen.
/// Returns true when every case stays under `tolerance`.
inline bool run_gradcheck_cases(const std::vector<GradCheckCase>& cases, double h,
                                double tolerance, std::ostream& out) {
    bool all_ok = true;
    double worst = 0.0;
    std::string worst_name;
    for (const auto& c : cases) {
        const GradCheckReport r = c.run(h);
        const bool ok = r.max_rel_err < tolerance;
        out << (ok ? "ok   " : "FAIL ") << c.name << "  max_rel_err=" << r.max_rel_err << "\n";
        if (r.max_rel_err > worst) {
            worst = r.max_rel_err;
            worst_name = c.name;
        }
        if (!ok) all_ok = false;
    }
    out << (all_ok ? "gradcheck passed" : "gradcheck FAILED") << " (worst " << worst << " in "
        << worst_name << ", tolerance " << tolerance << ")\n";
    return all_ok;
}

}  // namespace hvat
