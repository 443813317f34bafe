#include "dcl/analysis.hpp"

#include "dcl/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

namespace dcl::analysis {

double linear_probe(const Mat& train_x, const std::vector<int>& train_y, const Mat& test_x,
                    const std::vector<int>& test_y, int classes, const ProbeOptions& options) {
    if (train_x.rows() != static_cast<Eigen::Index>(train_y.size()) ||
        test_x.rows() != static_cast<Eigen::Index>(test_y.size()) || train_x.cols() != test_x.cols()) {
        throw ShapeError("linear_probe: feature/label size mismatch");
    }
    if (train_x.rows() == 0 || test_x.rows() == 0) {
        throw ShapeError("linear_probe: empty split");
    }
    for (int y : train_y)
        if (y < 0 || y >= classes) throw LookupError("linear_probe: label " + std::to_string(y) + " out of range");

    Eigen::RowVectorXd mean = train_x.colwise().mean();
    Eigen::RowVectorXd sd = ((train_x.rowwise() - mean).array().square().colwise().mean()).sqrt();
    for (Eigen::Index j = 0; j < sd.size(); ++j)
        if (sd(j) < 1e-12) sd(j) = 1.0;
    auto standardize = [&](const Mat& x) {
        Mat z = (x.rowwise() - mean).array().rowwise() / sd.array();
        Mat with_bias(z.rows(), z.cols() + 1);
        with_bias << z, Mat::Ones(z.rows(), 1);
        return with_bias;
    };
    const Mat xtr = standardize(train_x);
    const Mat xte = standardize(test_x);
    Mat onehot = Mat::Zero(xtr.rows(), classes);
    for (size_t i = 0; i < train_y.size(); ++i) onehot(static_cast<Eigen::Index>(i), train_y[i]) = 1.0;

    Mat w = Mat::Zero(xtr.cols(), classes);
    const double inv_n = 1.0 / static_cast<double>(xtr.rows());
    for (int it = 0; it < options.iterations; ++it) {
        Mat logits = xtr * w;
        Eigen::VectorXd m = logits.rowwise().maxCoeff();
        Mat p = (logits.colwise() - m).array().exp();
        Eigen::VectorXd sums = p.rowwise().sum();
        p = p.array().colwise() / sums.array();
        Mat grad = xtr.transpose() * (p - onehot) * inv_n;
        grad.topRows(w.rows() - 1) += options.l2 * w.topRows(w.rows() - 1);
        w -= options.learning_rate * grad;
    }

    const Mat scores = xte * w;
    int correct = 0;
    for (Eigen::Index i = 0; i < scores.rows(); ++i) {
        Eigen::Index best = 0;
        scores.row(i).maxCoeff(&best);
        correct += static_cast<int>(best) == test_y[static_cast<size_t>(i)];
    }
    return static_cast<double>(correct) / static_cast<double>(scores.rows());
}

double silhouette(const Mat& points, const std::vector<int>& labels) {
    const Eigen::Index n = points.rows();
    if (n != static_cast<Eigen::Index>(labels.size())) {
        throw ShapeError("silhouette: point/label count mismatch");
    }
    if (n < 2) return 0.0;
    std::map<int, int> sizes;
    for (int l : labels) ++sizes[l];
    if (sizes.size() < 2) return 0.0;

    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const int li = labels[static_cast<size_t>(i)];
        if (sizes[li] == 1) continue;
        std::map<int, double> dist_sum;
        for (Eigen::Index j = 0; j < n; ++j) {
            if (j == i) continue;
            dist_sum[labels[static_cast<size_t>(j)]] += (points.row(i) - points.row(j)).norm();
        }
        const double a = dist_sum[li] / (sizes[li] - 1);
        double b = std::numeric_limits<double>::infinity();
        for (const auto& [l, s] : dist_sum)
            if (l != li) b = std::min(b, s / sizes[l]);
        const double denom = std::max(a, b);
        total += denom > 0.0 ? (b - a) / denom : 0.0;
    }
    return total / static_cast<double>(n);
}

namespace {

// Conditional affinities P(j | i) with a per-point bandwidth found by
// bisection on the entropy, then symmetrized.
Mat input_affinities(const Mat& x, double perplexity) {
    const Eigen::Index n = x.rows();
    Eigen::VectorXd sq = x.rowwise().squaredNorm();
    Mat d2 = (sq.replicate(1, n) + sq.transpose().replicate(n, 1) - 2.0 * x * x.transpose()).cwiseMax(0.0);
    const double target = std::log(perplexity);
    Mat p = Mat::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        double lo = 0.0;
        double hi = std::numeric_limits<double>::infinity();
        double beta = 1.0;
        for (int it = 0; it < 64; ++it) {
            double sum = 0.0;
            double weighted = 0.0;
            for (Eigen::Index j = 0; j < n; ++j) {
                if (j == i) continue;
                const double v = std::exp(-beta * d2(i, j));
                p(i, j) = v;
                sum += v;
                weighted += v * d2(i, j);
            }
            if (sum <= 0.0) {
                hi = beta;
                beta = (lo + hi) / 2.0;
                continue;
            }
            const double entropy = std::log(sum) + beta * weighted / sum;
            p.row(i) /= sum;
            if (std::abs(entropy - target) < 1e-5) break;
            if (entropy > target) {
                lo = beta;
                beta = std::isinf(hi) ? beta * 2.0 : (lo + hi) / 2.0;
            } else {
                hi = beta;
                beta = (lo + hi) / 2.0;
            }
        }
    }
    Mat sym = (p + p.transpose()) / (2.0 * static_cast<double>(n));
    return sym.cwiseMax(1e-12);
}

} // namespace

Mat tsne(const Mat& points, const TsneOptions& options) {
    const Eigen::Index n = points.rows();
    if (n < 3) {
        throw ShapeError("tsne: need at least 3 points");
    }
    const double perplexity = std::min(options.perplexity, static_cast<double>(n - 1) / 3.0);
    Mat p = input_affinities(points, perplexity);

    // PCA initialization, scaled to a small spread.
    Mat centered = points.rowwise() - points.colwise().mean();
    Eigen::SelfAdjointEigenSolver<Mat> eig(centered.transpose() * centered);
    const Eigen::Index d = centered.cols();
    Mat basis(d, 2);
    basis.col(0) = eig.eigenvectors().col(d - 1);
    basis.col(1) = d >= 2 ? Eigen::VectorXd(eig.eigenvectors().col(d - 2)) : Eigen::VectorXd::Zero(d);
    Mat y = centered * basis;
    const double spread = std::sqrt(y.col(0).squaredNorm() / static_cast<double>(n));
    y *= spread > 0.0 ? 1e-4 / spread : 0.0;
    if (spread == 0.0) {
        for (Eigen::Index i = 0; i < n; ++i) y.row(i) << 1e-4 * std::cos(i), 1e-4 * std::sin(i);
    }

    Mat velocity = Mat::Zero(n, 2);
    Mat gains = Mat::Ones(n, 2);
    for (int it = 0; it < options.iterations; ++it) {
        const double exaggeration = it < options.exaggeration_iterations ? options.early_exaggeration : 1.0;
        const double momentum = it < 250 ? 0.5 : 0.8;
        Eigen::VectorXd sq = y.rowwise().squaredNorm();
        Mat num = (1.0 + (sq.replicate(1, n) + sq.transpose().replicate(n, 1) - 2.0 * y * y.transpose()).array())
                      .inverse();
        num.diagonal().setZero();
        const Mat q = (num / num.sum()).cwiseMax(1e-12);
        const Mat w = (exaggeration * p - q).cwiseProduct(num);
        Mat grad = 4.0 * (Mat(w.rowwise().sum().asDiagonal()) - w) * y;
        for (Eigen::Index i = 0; i < n; ++i) {
            for (int k = 0; k < 2; ++k) {
                const bool same_sign = (grad(i, k) > 0.0) == (velocity(i, k) > 0.0);
                gains(i, k) = std::max(same_sign ? gains(i, k) * 0.8 : gains(i, k) + 0.2, 0.01);
            }
        }
        velocity = momentum * velocity - options.learning_rate * gains.cwiseProduct(grad);
        y += velocity;
        y.rowwise() -= y.colwise().mean();
    }
    return y;
}

void write_scatter_svg(const std::string& path, const Mat& xy, const std::vector<int>& labels,
                       const std::string& title) {
    static const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path);
    }
    const double size = 480.0;
    const double margin = 30.0;
    const double x0 = xy.col(0).minCoeff();
    const double x1 = xy.col(0).maxCoeff();
    const double y0 = xy.col(1).minCoeff();
    const double y1 = xy.col(1).maxCoeff();
    auto sx = [&](double v) { return margin + (x1 > x0 ? (v - x0) / (x1 - x0) : 0.5) * (size - 2 * margin); };
    auto sy = [&](double v) { return size - margin - (y1 > y0 ? (v - y0) / (y1 - y0) : 0.5) * (size - 2 * margin); };

    out << std::fixed << std::setprecision(2);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size << "\" height=\"" << size + 20 << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << margin << "\" y=\"18\" font-family=\"sans-serif\" font-size=\"13\">" << title << "</text>\n";
    for (Eigen::Index i = 0; i < xy.rows(); ++i) {
        const int l = labels[static_cast<size_t>(i)];
        const char* color = palette[static_cast<size_t>(std::abs(l)) % 10];
        out << "<circle cx=\"" << sx(xy(i, 0)) << "\" cy=\"" << sy(xy(i, 1)) + 20 << "\" r=\"3\" fill=\"" << color
            << "\" fill-opacity=\"0.8\"/>\n";
    }
    std::map<int, int> seen;
    for (int l : labels) seen[l];
    int row = 0;
    for (const auto& [l, unused] : seen) {
        (void)unused;
        const double ly = 40.0 + 16.0 * row++;
        out << "<circle cx=\"" << size - 70 << "\" cy=\"" << ly << "\" r=\"4\" fill=\""
            << palette[static_cast<size_t>(std::abs(l)) % 10] << "\"/>\n";
        out << "<text x=\"" << size - 60 << "\" y=\"" << ly + 4
            << "\" font-family=\"sans-serif\" font-size=\"11\">motion " << l << "</text>\n";
    }
    out << "</svg>\n";
}

void write_coordinates_csv(const std::string& path, const Mat& xy, const std::vector<int>& motions,
                           const std::vector<int>& materials) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path);
    }
    out << "x,y,motion_type,material\n";
    out << std::setprecision(17);
    for (Eigen::Index i = 0; i < xy.rows(); ++i) {
        out << xy(i, 0) << ',' << xy(i, 1) << ',' << motions[static_cast<size_t>(i)] << ','
            << materials[static_cast<size_t>(i)] << '\n';
    }
}

} // namespace dcl::analysis
