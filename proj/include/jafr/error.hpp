/*
 * jafr - joint face alignment and 3D face reconstruction.
 *
 * File: include/jafr/error.hpp
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#ifndef JAFR_ERROR_HPP
#define JAFR_ERROR_HPP

#include <stdexcept>
#include <string>

namespace jafr {

/**
 * Base class of every exception thrown by the library. Catching this
 * is enough to report a one-line diagnostic at the CLI boundary.
 */
class Error : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

/// Operand sizes (vertex count, landmark count, matrix shapes) disagree.
class DimensionError : public Error
{
public:
    using Error::Error;
};

/// Precondition on a value was violated (empty input, degenerate box, ...).
class InvalidArgument : public Error
{
public:
    using Error::Error;
};

/// A least-squares system did not have full rank.
class SingularFitError : public Error
{
public:
    SingularFitError(const std::string& what, int rank) : Error(what), rank_(rank) {}
    int rank() const noexcept { return rank_; }

private:
    int rank_;
};

/// Malformed or truncated file contents.
class ParseError : public Error
{
public:
    using Error::Error;
};

/// File uses a format version this build cannot read.
class VersionError : public Error
{
public:
    using Error::Error;
};

} // namespace jafr

#endif /* JAFR_ERROR_HPP */
