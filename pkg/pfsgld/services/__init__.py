# Services package for pfsgld
