#pragma once

#include "relocnet/error.hpp"
#include "relocnet/eval.hpp"
#include "relocnet/fusion.hpp"
#include "relocnet/geom.hpp"
#include "relocnet/pose.hpp"
#include "relocnet/relpose.hpp"
#include "relocnet/retrieval.hpp"
#include "relocnet/rotation_averaging.hpp"
#include "relocnet/scene.hpp"
#include "relocnet/synth.hpp"
