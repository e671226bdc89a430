#pragma once

#include "mdfhp/model.hpp"

// Published maximum likelihood estimates for the two study catalogues.
namespace fixtures {

inline mdfhp::MdfhpParams make_mdfhp(double m0, double cut, std::initializer_list<double> lambda0,
                                     std::initializer_list<double> alpha, std::initializer_list<double> gamma,
                                     std::initializer_list<double> beta, std::initializer_list<double> c,
                                     std::initializer_list<double> b) {
    auto p = mdfhp::MdfhpParams::zeros(m0, {cut});
    auto fill = [](Eigen::MatrixXd& m, std::initializer_list<double> v) {
        auto it = v.begin();
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j) m(i, j) = *it++;
    };
    p.lambda0 = Eigen::Vector2d(*lambda0.begin(), *(lambda0.begin() + 1));
    p.b_mark = Eigen::Vector2d(*b.begin(), *(b.begin() + 1));
    fill(p.alpha, alpha);
    fill(p.gamma, gamma);
    fill(p.beta, beta);
    fill(p.c, c);
    return p;
}

inline mdfhp::MdfhpParams japan_mdfhp() {
    return make_mdfhp(4.75, 5.5, {0.029, 0.097}, {0.007, 0.112, 0.005, 0.472}, {2.142, 0.119, 2.762, 0.959},
                      {0.759, 0.425, 0.868, 0.531}, {5.452, 0.033, 2.497, 0.152}, {2.636, 2.666});
}

inline mdfhp::MdfhpParams middle_america_mdfhp() {
    return make_mdfhp(4.0, 4.35, {0.078, 0.049}, {0.041, 0.042, 0.116, 0.808}, {1.333, 3.583, 1.207, 0.392},
                      {0.718, 0.668, 0.687, 0.623}, {11.469, 0.462, 2.583, 0.065}, {2.469, 7.839});
}

inline mdfhp::EtasParams japan_etas() { return {0.120, 1.246, 1.597, 0.029, 1.089, 2.410, 4.75}; }
inline mdfhp::EtasParams middle_america_etas() { return {0.119, 1.767, 1.135, 0.022, 0.962, 4.280, 4.0}; }

}  // namespace fixtures
