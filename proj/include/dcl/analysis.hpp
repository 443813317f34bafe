#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

namespace dcl::analysis {

using Mat = Eigen::MatrixXd;

struct ProbeOptions {
    int iterations = 300;
    double l2 = 1e-3;
    double learning_rate = 0.5;
};

// Multinomial logistic regression fitted by full-batch gradient descent on
// standardized features (statistics from the training rows). Returns the
// test accuracy.
double linear_probe(const Mat& train_x, const std::vector<int>& train_y, const Mat& test_x,
                    const std::vector<int>& test_y, int classes, const ProbeOptions& options = {});

// Mean silhouette coefficient under Euclidean distance. Points in singleton
// clusters score 0.
double silhouette(const Mat& points, const std::vector<int>& labels);

struct TsneOptions {
    double perplexity = 20.0;
    int iterations = 750;
    double learning_rate = 100.0;
    double early_exaggeration = 12.0;
    int exaggeration_iterations = 150;
    uint64_t seed = 7;
};

// Exact t-SNE to 2-D, initialized from the top two principal components.
Mat tsne(const Mat& points, const TsneOptions& options = {});

// Scatter plot of 2-D points colored by label.
void write_scatter_svg(const std::string& path, const Mat& xy, const std::vector<int>& labels,
                       const std::string& title);
// Columns: x, y, motion_type, material.
void write_coordinates_csv(const std::string& path, const Mat& xy, const std::vector<int>& motions,
                           const std::vector<int>& materials);

} // namespace dcl::analysis
