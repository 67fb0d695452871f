#pragma once

namespace dcr {

enum class OutcomeType { Continuous, Binary };

}  // namespace dcr
