"""
Schemas package for fraclab
Contains Pydantic models for the lab's inputs and reports
"""
