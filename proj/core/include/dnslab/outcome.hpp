#pragma once

#include <array>
#include <string>

namespace dnslab {

// Shared trial outcome taxonomy: the runner classifies into these, the stats
// failure table aggregates them.
enum class OutcomeClass { Successful, PageLoadTimeout, DnsError, HarnessError, OtherError };

inline constexpr std::array<OutcomeClass, 5> kAllOutcomes = {
    OutcomeClass::Successful, OutcomeClass::PageLoadTimeout, OutcomeClass::DnsError,
    OutcomeClass::HarnessError, OutcomeClass::OtherError};

std::string outcome_to_string(OutcomeClass c);
OutcomeClass outcome_from_string(const std::string& s);  // throws std::invalid_argument

}  // namespace dnslab
