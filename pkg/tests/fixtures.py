"""Canonical programs and policies shared by the tests."""
from encflow.parser import parse_program
from encflow.policy import Policy

F1 = "PROC f(@x) BEGIN SELECT c FROM T WHERE T.a = @x END"
F1_POLICY = "T.a=DE:k1\nT.c=PT\n"
F2 = "PROC g(@x) BEGIN IF T.a = @x THEN UPDATE T SET d = 1 END"
F2_POLICY = "T.a=DE:k1\nT.d=PT\n"
F3 = "PROC h() BEGIN INSERT INTO H (h) SELECT b FROM T END"
F3_POLICY = "T.b=NDE:k2\nH.h=PT\n"
F4 = "PROC pay(@amt) BEGIN TRANSACTION BEGIN UPDATE T SET bal = bal + @amt END END"
F4_POLICY = "T.bal=ADE:k3\n"

PAYMENT = """
PROC payment(@c_id, @c_last, @h_amount) BEGIN
  TRANSACTION BEGIN
    UPDATE CUSTOMER SET C_BALANCE = C_BALANCE + @h_amount WHERE CUSTOMER.C_LAST = @c_last;
    INSERT INTO HISTORY (H_C_ID, H_BALANCE)
      SELECT C_ID, C_BALANCE FROM CUSTOMER WHERE CUSTOMER.C_ID = @c_id;
    IF CUSTOMER.C_CREDIT = 'BC' THEN
      UPDATE CUSTOMER SET C_DATA = CONCAT(C_DATA, 'x') WHERE CUSTOMER.C_ID = @c_id
    END
  END
END
"""
PAYMENT_POLICY = """
CUSTOMER.C_LAST=DE:k1
CUSTOMER.C_CREDIT=DE:k2
CUSTOMER.C_BALANCE=ADE:k3
CUSTOMER.C_DATA=PT
HISTORY.H_BALANCE=PT
"""
FREQ_LEAK = "PROC leak() BEGIN INSERT INTO T (B) SELECT A FROM T END"
FREQ_LEAK_POLICY = "T.A=NDE:k1\nT.B=DE:k2\n"


def load(src, pol):
    return parse_program(src), Policy.parse(pol)
