#pragma once

#include <vector>

#include "bgcrack/tensor.hpp"

namespace bgcrack {

struct AdamConfig {
    double lr = 6e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;  // L2 penalty folded into the gradient
};

class Adam {
public:
    Adam(std::vector<Tensor> params, AdamConfig cfg);

    void step();
    void zero_grad();
    long steps() const { return t_; }

private:
    std::vector<Tensor> params_;
    AdamConfig cfg_;
    std::vector<std::vector<double>> m_, v_;
    long t_ = 0;
};

}  // namespace bgcrack
