import bmolab
