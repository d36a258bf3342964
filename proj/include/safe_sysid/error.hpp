#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace safe_sysid {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidInput : public Error {
public:
    using Error::Error;
};

class InitializationFailure : public Error {
public:
    using Error::Error;
};

// p < 0.5 would make the tightened constraint matrices indefinite.
class UnsupportedRisk : public Error {
public:
    using Error::Error;
};

class TooManyPoints : public Error {
public:
    TooManyPoints(const std::string& what, double suggested_tau)
        : Error(what), suggested_tau_(suggested_tau) {}
    double suggested_tau() const { return suggested_tau_; }

private:
    double suggested_tau_;
};

class GenerationError : public Error {
public:
    using Error::Error;
};

class ParseError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// Raised when a sampled constraint has a negative right-hand side, so no
/// weight matrix can satisfy it. Carries every offending sample point.
class StructuralInfeasibility : public Error {
public:
    struct Offender {
        Eigen::VectorXd state;
        bool safety;  // false: stability
        double bound;
    };

    StructuralInfeasibility(const std::string& what, std::vector<Offender> offenders)
        : Error(what), offenders_(std::move(offenders)) {}
    const std::vector<Offender>& offenders() const { return offenders_; }

private:
    std::vector<Offender> offenders_;
};

}  // namespace safe_sysid
