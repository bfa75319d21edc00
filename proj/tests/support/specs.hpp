#pragma once

#include "vstab/predictor.hpp"

namespace vstab::testing {

/// A few hundred parameters per level: small enough for exhaustive
/// finite-difference checks.
inline ConvSpec tiny_spec(double gain = 1.0) {
    using A = Activation;
    ConvSpec s;
    s.levels[0] = {{kStackDepth, 2, 3, 3, A::Relu}, {2, 3, 3, 2, A::None}};
    s.levels[1] = {{kStackDepth, 2, 5, 8, A::Relu}, {2, 3, 3, 2, A::None}};
    s.levels[2] = {{kStackDepth, 2, 8, 8, A::Relu}, {2, 3, 3, 2, A::None}};
    s.output_gain = gain;
    return s;
}

}  // namespace vstab::testing
