#pragma once

#include <stdexcept>
#include <string>

namespace wvcal
{
// Exit codes of the command-line tool. Library errors carry the class they map to.
enum class ErrorClass : int
{
        Usage = 1,
        NonConvergence = 2,
        Identifiability = 3,
        Io = 4,
};

class Error : public std::runtime_error
{
public:
        Error(ErrorClass cls, const std::string& what) : std::runtime_error(what), cls_(cls)
        {
        }

        [[nodiscard]] ErrorClass error_class() const noexcept
        {
                return cls_;
        }

private:
        ErrorClass cls_;
};

// Parameter or input outside the admissible domain (non-positive parameter,
// log of a non-positive variance, bad confidence level, ...).
class DomainError : public Error
{
public:
        explicit DomainError(const std::string& what) : Error(ErrorClass::Usage, what)
        {
        }
};

// Singular normal equations, too few scales, scale grid not supported by the data.
class RankError : public Error
{
public:
        explicit RankError(const std::string& what) : Error(ErrorClass::Identifiability, what)
        {
        }
};

class IoError : public Error
{
public:
        explicit IoError(const std::string& what) : Error(ErrorClass::Io, what)
        {
        }
};

class ParseError : public Error
{
public:
        explicit ParseError(const std::string& what) : Error(ErrorClass::Usage, what)
        {
        }
};
}
